//! Daily risk-set panels with treatment levels and lagged covariates.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adoption::AdoptionLog;
use crate::error::{LabError, Result};
use crate::graph::{DirectedGraph, Direction, NodeId};
use crate::rng::{self, Domain};
use crate::shocks::Day;

/// Covariates are measured this many days before the outcome day.
pub const COVARIATE_LAG: Day = 7;
/// Dose counts adoptions over this many days before the outcome day.
pub const DOSE_WINDOW: Day = 7;
/// Highest dose level; it collects every count above 3.
pub const DOSE_TOP: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentKind {
    /// Any neighbor adopted within days `[day - d, day - 1]`.
    Timing { d: u32 },
    /// Neighbor adoptions over the previous week, binned 0, 1, 2, 3, 3+.
    Dose,
    /// Any neighbor adopts within `[day + 1, day + d]`.
    PlaceboFuture { d: u32 },
    /// Dose levels shuffled across egos within each day.
    PlaceboPermuted { seed: u64 },
}

impl TreatmentKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TreatmentKind::Timing { d } | TreatmentKind::PlaceboFuture { d } if !(1..=6).contains(&d) => {
                Err(LabError::invalid(format!("window d must lie in 1..=6, got {d}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_multilevel(&self) -> bool {
        matches!(self, TreatmentKind::Dose | TreatmentKind::PlaceboPermuted { .. })
    }
}

pub fn level_label(kind: &TreatmentKind, level: u8) -> String {
    if kind.is_multilevel() && level == DOSE_TOP {
        "3+".to_string()
    } else {
        level.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub names: Vec<String>,
    /// Columns spanning the matching space.
    pub core: Vec<usize>,
}

impl CovariateSchema {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(LabError::invalid("covariate schema has no columns"));
        }
        if self.core.is_empty() || self.core.iter().any(|&c| c >= self.names.len()) {
            return Err(LabError::invalid("core columns must be a non-empty subset of the schema"));
        }
        Ok(())
    }
}

/// Supplies the covariate vector of an ego for an outcome day.
pub trait CovariateSource {
    fn schema(&self) -> &CovariateSchema;
    fn covariates(&self, ego: NodeId, day: Day) -> Result<Vec<f64>>;
}

pub const NETWORK_COVARIATES: [&str; 11] = [
    "followee_adopted",
    "followee_adopted_frac",
    "follower_adopted",
    "follower_adopted_frac",
    "mutual_adopted",
    "mutual_adopted_frac",
    "in_degree",
    "out_degree",
    "mutual_degree",
    "log_in_degree",
    "log_out_degree",
];

/// Saturation counts and fractions at `day - 7` plus network size, with
/// optional static per-node columns appended (such as a trait).
pub struct NetworkCovariates<'a> {
    g: &'a DirectedGraph,
    times: Vec<Option<Day>>,
    neighbors: [Vec<Vec<NodeId>>; 3],
    extra: Vec<Vec<f64>>,
    schema: CovariateSchema,
}

impl<'a> NetworkCovariates<'a> {
    pub fn new(g: &'a DirectedGraph, log: &AdoptionLog) -> Result<Self> {
        let times = log.adoption_times(g.node_count())?;
        let nb = |dir| (0..g.node_count()).map(|i| g.neighbors(i, dir)).collect::<Result<Vec<_>>>();
        Ok(NetworkCovariates {
            g,
            times,
            neighbors: [nb(Direction::Followee)?, nb(Direction::Follower)?, nb(Direction::Mutual)?],
            extra: Vec::new(),
            schema: CovariateSchema {
                names: NETWORK_COVARIATES.iter().map(|s| s.to_string()).collect(),
                core: (0..NETWORK_COVARIATES.len()).collect(),
            },
        })
    }

    /// Appends a static column; it enters the propensity model but not the core space.
    pub fn with_static(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.g.node_count() {
            return Err(LabError::invalid(format!(
                "column `{name}` has {} values for {} nodes",
                values.len(),
                self.g.node_count()
            )));
        }
        self.schema.names.push(name.to_string());
        self.extra.push(values);
        Ok(self)
    }
}

impl CovariateSource for NetworkCovariates<'_> {
    fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    fn covariates(&self, ego: NodeId, day: Day) -> Result<Vec<f64>> {
        if ego >= self.g.node_count() {
            return Err(LabError::NodeOutOfRange { id: ego, count: self.g.node_count() });
        }
        let cutoff = day.checked_sub(COVARIATE_LAG);
        let mut out = Vec::with_capacity(self.schema.dim());
        for nb in &self.neighbors {
            let list = &nb[ego];
            let adopted = match cutoff {
                Some(c) => list.iter().filter(|&&v| self.times[v].is_some_and(|t| t < c)).count(),
                None => 0,
            };
            out.push(adopted as f64);
            out.push(if list.is_empty() { 0.0 } else { adopted as f64 / list.len() as f64 });
        }
        let (kin, kout) = (self.g.in_degree(ego) as f64, self.g.out_degree(ego) as f64);
        out.extend([kin, kout, self.g.mutual_degree(ego) as f64, kin.ln_1p(), kout.ln_1p()]);
        out.extend(self.extra.iter().map(|col| col[ego]));
        Ok(out)
    }
}

/// Precomputed covariates keyed by (ego, outcome day).
pub struct CovariateTable {
    schema: CovariateSchema,
    rows: BTreeMap<(NodeId, Day), Vec<f64>>,
}

impl CovariateTable {
    pub fn new(schema: CovariateSchema, rows: BTreeMap<(NodeId, Day), Vec<f64>>) -> Result<Self> {
        schema.validate()?;
        if let Some(((e, d), v)) = rows.iter().find(|(_, v)| v.len() != schema.dim()) {
            return Err(LabError::invalid(format!(
                "covariates for ego {e} day {d} have {} values, schema has {}",
                v.len(),
                schema.dim()
            )));
        }
        Ok(CovariateTable { schema, rows })
    }
}

impl CovariateSource for CovariateTable {
    fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    fn covariates(&self, ego: NodeId, day: Day) -> Result<Vec<f64>> {
        self.rows
            .get(&(ego, day))
            .cloned()
            .ok_or_else(|| LabError::invalid(format!("no covariates for ego {ego} on day {day}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub ego: NodeId,
    pub day: Day,
    pub level: u8,
    pub outcome: bool,
}

/// One row per (ego, day) in the risk set, sorted by day then ego.
#[derive(Clone, Debug, PartialEq)]
pub struct TreatmentPanel {
    pub kind: TreatmentKind,
    pub direction: Direction,
    pub schema: CovariateSchema,
    rows: Vec<PanelRow>,
    /// Row-major, `schema.dim()` values per row.
    covariates: Vec<f64>,
    days: BTreeMap<Day, Range<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSchemaFile {
    pub kind: TreatmentKind,
    pub direction: Direction,
    pub covariates: CovariateSchema,
    pub covariate_lag_days: Day,
}

impl TreatmentPanel {
    /// Assembles a panel from rows and their covariates; rows are re-sorted by (day, ego).
    pub fn from_rows(
        kind: TreatmentKind,
        direction: Direction,
        schema: CovariateSchema,
        rows: Vec<PanelRow>,
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self> {
        schema.validate()?;
        if rows.len() != covariates.len() {
            return Err(LabError::invalid("row and covariate counts differ"));
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&i| (rows[i].day, rows[i].ego));
        let mut sorted = Vec::with_capacity(rows.len());
        let mut flat = Vec::with_capacity(rows.len() * schema.dim());
        let mut days: BTreeMap<Day, Range<usize>> = BTreeMap::new();
        for (pos, &i) in order.iter().enumerate() {
            let r = &rows[i];
            if let Some(prev) = sorted.last().map(|p: &PanelRow| (p.day, p.ego)) {
                if prev == (r.day, r.ego) {
                    return Err(LabError::invalid(format!("ego {} appears twice on day {}", r.ego, r.day)));
                }
            }
            if covariates[i].len() != schema.dim() {
                return Err(LabError::invalid(format!(
                    "row for ego {} day {} has {} covariates, schema has {}",
                    r.ego,
                    r.day,
                    covariates[i].len(),
                    schema.dim()
                )));
            }
            if covariates[i].iter().any(|v| !v.is_finite()) {
                return Err(LabError::invalid(format!("non-finite covariate for ego {} day {}", r.ego, r.day)));
            }
            days.entry(r.day).or_insert(pos..pos).end = pos + 1;
            sorted.push(r.clone());
            flat.extend_from_slice(&covariates[i]);
        }
        Ok(TreatmentPanel {
            kind,
            direction,
            schema,
            rows: sorted,
            covariates: flat,
            days,
        })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn covariates(&self, row: usize) -> &[f64] {
        let p = self.dim();
        &self.covariates[row * p..(row + 1) * p]
    }

    pub fn days(&self) -> impl Iterator<Item = Day> + '_ {
        self.days.keys().copied()
    }

    pub fn day_rows(&self, day: Day) -> Range<usize> {
        self.days.get(&day).cloned().unwrap_or(0..0)
    }

    /// Distinct treatment levels present, ascending.
    pub fn levels(&self) -> Vec<u8> {
        let mut l: Vec<u8> = self.rows.iter().map(|r| r.level).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["ego".to_string(), "day".into(), "outcome".into(), "treatment".into()];
        header.extend(self.schema.names.iter().cloned());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.ego.to_string(), r.day.to_string(), u8::from(r.outcome).to_string(), r.level.to_string()];
            rec.extend(self.covariates(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| LabError::io(path, e))
    }

    pub fn schema_file(&self) -> PanelSchemaFile {
        PanelSchemaFile {
            kind: self.kind,
            direction: self.direction,
            covariates: self.schema.clone(),
            covariate_lag_days: COVARIATE_LAG,
        }
    }

    pub fn load_csv(path: &Path, schema: &PanelSchemaFile) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let fixed = ["ego", "day", "outcome", "treatment"];
        let expected: Vec<&str> = fixed.iter().copied().chain(schema.covariates.names.iter().map(String::as_str)).collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(LabError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header must be `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        let mut covs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |col: &str| LabError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("bad value in column `{col}`"),
            };
            let ego: NodeId = rec[0].parse().map_err(|_| bad("ego"))?;
            let day: Day = rec[1].parse().map_err(|_| bad("day"))?;
            let outcome = match &rec[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("outcome")),
            };
            let level: u8 = rec[3].parse().map_err(|_| bad("treatment"))?;
            let mut x = Vec::with_capacity(schema.covariates.dim());
            for (j, name) in schema.covariates.names.iter().enumerate() {
                x.push(rec[4 + j].parse::<f64>().map_err(|_| bad(name))?);
            }
            rows.push(PanelRow { ego, day, level, outcome });
            covs.push(x);
        }
        if rows.is_empty() {
            return Err(LabError::EmptyInput(path.to_path_buf()));
        }
        TreatmentPanel::from_rows(schema.kind, schema.direction, schema.covariates.clone(), rows, covs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelOptions {
    pub kind: TreatmentKind,
    pub direction: Direction,
    /// Inclusive outcome-day range; defaults to every day whose covariate
    /// and exposure windows fall inside the log horizon.
    pub days: Option<(Day, Day)>,
}

fn count_in(sorted: &[Day], lo: i64, hi: i64) -> usize {
    if hi < lo {
        return 0;
    }
    let a = sorted.partition_point(|&t| i64::from(t) < lo);
    let b = sorted.partition_point(|&t| i64::from(t) <= hi);
    b - a
}

/// Builds the risk-set panel: every ego not adopted before `day` appears
/// once per day, with outcome `adopted on day`.
pub fn build_panel(
    g: &DirectedGraph,
    log: &AdoptionLog,
    covariates: &dyn CovariateSource,
    opts: &PanelOptions,
) -> Result<TreatmentPanel> {
    opts.kind.validate()?;
    let n = g.node_count();
    let times = log.adoption_times(n)?;
    let (start, end) = match opts.days {
        Some(r) => r,
        None => {
            let tail = match opts.kind {
                TreatmentKind::PlaceboFuture { d } => d,
                _ => 0,
            };
            (log.first_day + COVARIATE_LAG, log.last_day.saturating_sub(tail))
        }
    };
    if start > end {
        return Err(LabError::insufficient(format!("no outcome days in [{start}, {end}]")));
    }

    let exposure_days: Vec<Vec<Day>> = (0..n)
        .map(|u| {
            let mut d: Vec<Day> = g.neighbors(u, opts.direction)?.iter().filter_map(|&v| times[v]).collect();
            d.sort_unstable();
            Ok(d)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut covs = Vec::new();
    for day in start..=end {
        let first_row = rows.len();
        let dd = i64::from(day);
        for u in 0..n {
            if times[u].is_some_and(|t| t < day) {
                continue;
            }
            let ex = &exposure_days[u];
            let level = match opts.kind {
                TreatmentKind::Timing { d } => u8::from(count_in(ex, dd - i64::from(d), dd - 1) > 0),
                TreatmentKind::PlaceboFuture { d } => u8::from(count_in(ex, dd + 1, dd + i64::from(d)) > 0),
                TreatmentKind::Dose | TreatmentKind::PlaceboPermuted { .. } => {
                    count_in(ex, dd - i64::from(DOSE_WINDOW), dd - 1).min(usize::from(DOSE_TOP)) as u8
                }
            };
            rows.push(PanelRow {
                ego: u,
                day,
                level,
                outcome: times[u] == Some(day),
            });
            covs.push(covariates.covariates(u, day)?);
        }
        if let TreatmentKind::PlaceboPermuted { seed } = opts.kind {
            let mut levels: Vec<u8> = rows[first_row..].iter().map(|r| r.level).collect();
            levels.shuffle(&mut rng::stream(seed, Domain::Placebo, u64::from(day)));
            for (r, l) in rows[first_row..].iter_mut().zip(levels) {
                r.level = l;
            }
        }
    }
    if rows.is_empty() {
        return Err(LabError::insufficient("risk set is empty on every day"));
    }
    TreatmentPanel::from_rows(opts.kind, opts.direction, covariates.schema().clone(), rows, covs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adoption::Adoption;

    /// Ego 0 follows 1..=6.
    fn star() -> DirectedGraph {
        let edges: Vec<_> = (1..=6).map(|j| (0, j)).collect();
        DirectedGraph::from_edges(7, &edges).unwrap().0
    }

    fn log(recs: &[(NodeId, Day)]) -> AdoptionLog {
        AdoptionLog::new(recs.iter().map(|&(node, day)| Adoption { node, day }).collect(), 0, 30).unwrap()
    }

    fn panel(l: &AdoptionLog, kind: TreatmentKind, days: (Day, Day)) -> TreatmentPanel {
        let g = star();
        let cov = NetworkCovariates::new(&g, l).unwrap();
        let opts = PanelOptions { kind, direction: Direction::Followee, days: Some(days) };
        build_panel(&g, l, &cov, &opts).unwrap()
    }

    fn ego_level(p: &TreatmentPanel, ego: NodeId, day: Day) -> u8 {
        p.rows().iter().find(|r| r.ego == ego && r.day == day).unwrap().level
    }

    #[test]
    fn same_day_exposure_untreated() {
        let l = log(&[(1, 10)]);
        for d in 1..=6 {
            let p = panel(&l, TreatmentKind::Timing { d }, (10, 10));
            assert_eq!(ego_level(&p, 0, 10), 0);
        }
        let p = panel(&l, TreatmentKind::Timing { d: 1 }, (11, 11));
        assert_eq!(ego_level(&p, 0, 11), 1);
        let p = panel(&l, TreatmentKind::Timing { d: 3 }, (13, 14));
        assert_eq!(ego_level(&p, 0, 13), 1);
        assert_eq!(ego_level(&p, 0, 14), 0);
    }

    #[test]
    fn five_recent_adoptions_is_top_dose() {
        let l = log(&[(1, 10), (2, 11), (3, 12), (4, 14), (5, 15)]);
        let p = panel(&l, TreatmentKind::Dose, (16, 16));
        assert_eq!(ego_level(&p, 0, 16), DOSE_TOP);
        assert_eq!(level_label(&p.kind, DOSE_TOP), "3+");
        let p = panel(&l, TreatmentKind::Dose, (19, 19));
        // day 19 window is [12, 18]
        assert_eq!(ego_level(&p, 0, 19), 3);
    }

    #[test]
    fn future_placebo_window() {
        let l = log(&[(1, 12)]);
        let p = panel(&l, TreatmentKind::PlaceboFuture { d: 2 }, (9, 12));
        assert_eq!(ego_level(&p, 0, 9), 0);
        assert_eq!(ego_level(&p, 0, 10), 1);
        assert_eq!(ego_level(&p, 0, 11), 1);
        assert_eq!(ego_level(&p, 0, 12), 0);
    }

    #[test]
    fn adopters_leave_risk_set() {
        let l = log(&[(0, 12), (3, 8)]);
        let p = panel(&l, TreatmentKind::Timing { d: 2 }, (7, 20));
        for r in p.rows() {
            if r.ego == 0 {
                assert!(r.day <= 12);
                assert_eq!(r.outcome, r.day == 12);
            }
            if r.ego == 3 {
                assert!(r.day <= 8);
            }
        }
    }

    #[test]
    fn covariates_lag_one_week() {
        let l = log(&[(1, 2), (2, 5)]);
        let p = panel(&l, TreatmentKind::Timing { d: 1 }, (10, 13));
        let row = |day| p.rows().iter().position(|r| r.ego == 0 && r.day == day).unwrap();
        // day 10 counts adoptions before day 3; day 13 counts those before day 6
        assert_eq!(p.covariates(row(10))[0], 1.0);
        assert_eq!(p.covariates(row(13))[0], 2.0);
        assert!((p.covariates(row(13))[1] - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(p.covariates(row(13))[6], 6.0);
    }

    #[test]
    fn permutation_preserves_daily_multiset() {
        use crate::synthgen::{gen_graph, SynthConfig};
        let cfg = SynthConfig { n_nodes: 300, mean_degree: 8.0, ..Default::default() };
        let (g, _) = gen_graph(&cfg).unwrap();
        let recs: Vec<_> = (0..300).step_by(3).map(|i| Adoption { node: i, day: (i % 29) as Day }).collect();
        let l = AdoptionLog::new(recs, 0, 30).unwrap();
        let cov = NetworkCovariates::new(&g, &l).unwrap();
        let base = PanelOptions { kind: TreatmentKind::Dose, direction: Direction::Followee, days: None };
        let perm = PanelOptions { kind: TreatmentKind::PlaceboPermuted { seed: 9 }, ..base.clone() };
        let a = build_panel(&g, &l, &cov, &base).unwrap();
        let b = build_panel(&g, &l, &cov, &perm).unwrap();
        assert_eq!(a.len(), b.len());
        let mut moved = 0;
        for day in a.days() {
            let mut la: Vec<u8> = a.rows()[a.day_rows(day)].iter().map(|r| r.level).collect();
            let mut lb: Vec<u8> = b.rows()[b.day_rows(day)].iter().map(|r| r.level).collect();
            moved += la.iter().zip(&lb).filter(|(x, y)| x != y).count();
            la.sort_unstable();
            lb.sort_unstable();
            assert_eq!(la, lb);
        }
        assert!(moved > 0);
    }

    #[test]
    fn table_misalignment_is_an_error() {
        let l = log(&[(1, 10)]);
        let schema = CovariateSchema { names: vec!["x".into()], core: vec![0] };
        let mut rows = BTreeMap::new();
        for u in 0..7 {
            rows.insert((u, 10), vec![1.0]);
        }
        let t = CovariateTable::new(schema, rows).unwrap();
        let opts = PanelOptions { kind: TreatmentKind::Timing { d: 1 }, direction: Direction::Followee, days: Some((10, 11)) };
        assert!(build_panel(&star(), &l, &t, &opts).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let l = log(&[(1, 10), (2, 11)]);
        let p = panel(&l, TreatmentKind::Dose, (9, 12));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        p.write_csv(&path).unwrap();
        assert_eq!(TreatmentPanel::load_csv(&path, &p.schema_file()).unwrap(), p);
    }
}
