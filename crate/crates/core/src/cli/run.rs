use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::manifest::Manifest;
use super::*;
use crate::adoption::AdoptionLog;
use crate::calibrate::{calibrate, calibrate_activity, MechanismParams};
use crate::cascade::{read_events_jsonl, run_ensemble, write_events_jsonl, CascadeConfig, MechanismSet, Seeding};
use crate::error::Result;
use crate::features::{extract_log, read_feature_csv, write_feature_csv, FeatureVector};
use crate::graph::DirectedGraph;
use crate::matchlab::{
    build_panel, estimate, MatchConfig, NetworkCovariates, PanelOptions, PanelSchemaFile, PropensityConfig,
    TreatmentKind, TreatmentPanel,
};
use crate::mechclass::{decompose, evaluate, train, BoostParams, BoostedForest, Dataset};
use crate::shocks::{detect_shocks, fit_power_law, AdoptionSeries, DetectConfig, Shock, ShockRange, ShockSchedule};
use crate::structtest::degree_order_test;
use crate::synthgen::{gen_graph, gen_homophily_adoptions, gen_pure_cascade, SynthConfig};

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn dir_of(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

/// `dir/<stem>.<suffix>` next to `file`.
fn sibling(file: &Path, suffix: &str) -> PathBuf {
    let stem = file.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    dir_of(file).join(format!("{stem}.{suffix}"))
}

fn load_graph(path: &Path) -> Result<DirectedGraph> {
    Ok(DirectedGraph::load_edge_list(path)?.0)
}

fn schedule(a: &ShockArgs) -> Result<ShockSchedule> {
    if a.reference_shocks {
        Ok(ShockSchedule::reference())
    } else if let Some(p) = &a.shocks {
        ShockSchedule::load_json(p)
    } else {
        Ok(ShockSchedule::empty())
    }
}

/// Reads `node,<col>...` rows keyed by external id into per-node columns.
fn node_table(path: &Path, g: &DirectedGraph, fill: Option<f64>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let index = g.id_index();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("node") || headers.len() < 2 {
        return Err(LabError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header `node,<column>...`".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut cols = vec![vec![f64::NAN; g.node_count()]; names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| LabError::Parse { path: path.to_path_buf(), line, message };
        let node = *index.get(&rec[0]).ok_or_else(|| bad(format!("unknown node `{}`", &rec[0])))?;
        for (j, col) in cols.iter_mut().enumerate() {
            let v = rec.get(j + 1).unwrap_or_default();
            col[node] = v.parse().map_err(|_| bad(format!("bad value `{v}` in column `{}`", names[j])))?;
        }
    }
    for (j, col) in cols.iter_mut().enumerate() {
        for (i, v) in col.iter_mut().enumerate() {
            if v.is_nan() {
                *v = fill.ok_or_else(|| {
                    LabError::invalid(format!("{}: node `{}` has no `{}` value", path.display(), g.external_id(i), names[j]))
                })?;
            }
        }
    }
    Ok((names, cols))
}

struct Ctx {
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn manifest<A: Serialize>(&self, command: &str, dir: &Path, args: &A) -> Result<Manifest> {
        Ok(Manifest::new(command, dir, self.seed, serde_json::to_value(args)?))
    }
}

pub(super) fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.global.seed,
        quiet: cli.global.quiet,
    };
    let name = cli.command.name();
    let manifest = match &cli.command {
        Command::Ingest(a) => ingest(&ctx, name, a)?,
        Command::Simulate(a) => simulate(&ctx, name, a)?,
        Command::Calibrate(a) => calibrate_cmd(&ctx, name, a)?,
        Command::Features(a) => features(&ctx, name, a)?,
        Command::Train(a) => train_cmd(&ctx, name, a)?,
        Command::Classify(a) => classify(&ctx, name, a)?,
        Command::Decompose(a) => decompose_cmd(&ctx, name, a)?,
        Command::DegreeOrderTest(a) => order_test(&ctx, name, a)?,
        Command::DetectShocks(a) => detect(&ctx, name, a)?,
        Command::FitShock(a) => fit_shock(&ctx, name, a)?,
        Command::Match(a) => match_cmd(&ctx, name, a)?,
        Command::Synth(SynthCommand::Graph(a)) => synth_graph(&ctx, name, a)?,
        Command::Synth(SynthCommand::HomophilyLog(a)) => synth_homophily(&ctx, name, a)?,
        Command::Synth(SynthCommand::Cascade(a)) => synth_cascade(&ctx, name, a)?,
        Command::Report(a) => report(&ctx, name, a)?,
    };
    let path = manifest.write()?;
    ctx.note(format!("{name}: wrote {}", path.display()));
    Ok(())
}

fn ingest(ctx: &Ctx, name: &str, a: &IngestArgs) -> Result<Manifest> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let (g, report) = DirectedGraph::load_edge_list(&a.edges)?;
    ctx.note(format!("loaded {} nodes, {} edges", g.node_count(), g.edge_count()));
    let graph_out = a.out_dir.join("graph.csv");
    g.write_edge_list(&graph_out)?;
    m.output(&graph_out);
    let ids_out = a.out_dir.join("ids.csv");
    g.write_id_map(&ids_out)?;
    m.output(&ids_out);

    let mut log_info = Value::Null;
    if let Some(lp) = &a.log {
        let log = AdoptionLog::load_csv(lp, &g, a.first_day.zip(a.last_day))?;
        let log_out = a.out_dir.join("log.csv");
        log.write_csv(&log_out, &g)?;
        m.output(&log_out);
        let series_out = a.out_dir.join("series.csv");
        AdoptionSeries::new(log.daily_counts()).write_csv(&series_out)?;
        m.output(&series_out);
        log_info = json!({ "adopters": log.len(), "first_day": log.first_day, "last_day": log.last_day });
    }
    let summary = json!({ "graph": report, "log": log_info });
    let out = a.out_dir.join("ingest.json");
    write_json(&out, &summary)?;
    m.output(&out);
    m.summary = summary;
    Ok(m)
}

fn simulate(ctx: &Ctx, name: &str, a: &SimulateArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let g = load_graph(&a.graph)?;
    let params: MechanismParams = read_json(&a.params)?;
    let cfg = CascadeConfig {
        stop_fraction: a.stop_fraction,
        horizon_days: a.horizon,
        seeds: if a.seeds == 0 { Seeding::None } else { Seeding::Count(a.seeds) },
        ..Default::default()
    };
    ctx.note(format!("simulating {} realizations on {} nodes", a.runs, g.node_count()));
    let ens = run_ensemble(&g, &params, &cfg, a.runs, ctx.seed)?;
    write_events_jsonl(&a.out, &ens.events)?;
    m.output(&a.out);
    let summary_out = sibling(&a.out, "summary.json");
    write_json(&summary_out, &ens.summary)?;
    m.output(&summary_out);
    m.summary = json!({
        "events_before_dedup": ens.summary.counts_before_dedup,
        "events_after_dedup": ens.summary.counts_after_dedup,
    });
    Ok(m)
}

fn calibrate_cmd(ctx: &Ctx, name: &str, a: &CalibrateArgs) -> Result<Manifest> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let g = load_graph(&a.graph)?;
    let mut log = AdoptionLog::load_csv(&a.log, &g, None)?;
    if let Some(p) = &a.shock_ranges {
        let ranges: Vec<ShockRange> = read_json(p)?;
        log = log.with_detected_shocks(&ranges);
    }
    let cal = calibrate(&g, &log)?;
    let n = g.node_count();
    let activity = match &a.posts {
        Some(p) => {
            let (_, cols) = node_table(p, &g, Some(0.0))?;
            calibrate_activity(&cols[0], a.activity_mean)?
        }
        None => {
            if !(a.activity_mean > 0.0 && a.activity_mean <= 1.0) {
                return Err(LabError::invalid(format!("activity mean {} outside (0, 1]", a.activity_mean)));
            }
            vec![a.activity_mean; n]
        }
    };
    let r = a.r.unwrap_or(cal.background.rate);
    let params = MechanismParams::from_pools(n, &cal.beta, &cal.phi, activity, r, schedule(&a.shocks)?, a.shock_prob, ctx.seed)?;
    let cal_out = a.out_dir.join("calibration.json");
    write_json(&cal_out, &cal)?;
    m.output(&cal_out);
    let params_out = a.out_dir.join("params.json");
    write_json(&params_out, &params)?;
    m.output(&params_out);
    m.summary = json!({
        "beta": cal.beta.summary,
        "phi": cal.phi.summary,
        "background": cal.background,
        "r_used": r,
    });
    Ok(m)
}

fn labeled_events(path: &Path) -> Result<(Vec<FeatureVector>, Vec<String>)> {
    let events = read_events_jsonl(path)?;
    let kept: Vec<_> = events.iter().filter(|e| !e.seeded).collect();
    Ok((
        kept.iter().map(|e| e.features).collect(),
        kept.iter().map(|e| e.mechanism.name().to_string()).collect(),
    ))
}

fn features(ctx: &Ctx, name: &str, a: &FeaturesArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let rows = if let Some(ev) = &a.events {
        let (rows, labels) = labeled_events(ev)?;
        write_feature_csv(&a.out, &rows, Some(&labels))?;
        rows.len()
    } else {
        let (Some(gp), Some(lp)) = (&a.graph, &a.log) else {
            return Err(LabError::invalid("--log and --graph are required without --events"));
        };
        let g = load_graph(gp)?;
        let log = AdoptionLog::load_csv(lp, &g, None)?;
        let rows = extract_log(&g, &log, &schedule(&a.shocks)?)?;
        write_feature_csv(&a.out, &rows, None)?;
        rows.len()
    };
    m.output(&a.out);
    m.summary = json!({ "rows": rows });
    Ok(m)
}

fn train_cmd(ctx: &Ctx, name: &str, a: &TrainArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let (rows, labels) = match (&a.events, &a.features) {
        (Some(ev), _) => labeled_events(ev)?,
        (None, Some(fp)) => {
            let (rows, labels) = read_feature_csv(fp)?;
            let labels = labels.ok_or_else(|| LabError::invalid(format!("{} has no label column", fp.display())))?;
            (rows, labels)
        }
        (None, None) => return Err(LabError::invalid("--events or --features is required")),
    };
    let data = Dataset {
        x: rows.iter().map(FeatureVector::to_array).collect(),
        y: labels.iter().map(|l| l.parse()).collect::<Result<_>>()?,
    };
    let params = BoostParams {
        n_rounds: a.rounds,
        max_depth: a.max_depth,
        learning_rate: a.learning_rate,
        min_child_weight: a.min_child_weight,
        lambda: a.lambda,
        max_bins: a.max_bins,
    };
    ctx.note(format!("training on {} rows", data.len()));
    let (model, report) = train(&data, &params, a.test_fraction, ctx.seed)?;
    model.save(&a.out)?;
    m.output(&a.out);
    let metrics_out = sibling(&a.out, "metrics.json");
    write_json(&metrics_out, &report)?;
    m.output(&metrics_out);
    m.summary = json!({
        "train_rows": report.train_rows,
        "test_rows": report.test_rows,
        "test_macro_f1": report.test.macro_f1,
        "test_accuracy": report.test.accuracy,
    });
    Ok(m)
}

fn classify(ctx: &Ctx, name: &str, a: &ClassifyArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let model = BoostedForest::load(&a.model)?;
    let (rows, labels) = read_feature_csv(&a.features)?;
    let preds = model.predict_many(&rows);
    let mut w = csv::Writer::from_path(&a.out)?;
    let mut header = vec!["row".to_string(), "label".to_string()];
    header.extend(Mechanism::ALL.iter().map(|c| format!("p_{}", c.name())));
    w.write_record(&header)?;
    let mut counts = [0usize; 4];
    for (i, p) in preds.iter().enumerate() {
        counts[p.label.index()] += 1;
        let mut rec = vec![i.to_string(), p.label.name().to_string()];
        rec.extend(p.probs.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LabError::io(&a.out, e))?;
    m.output(&a.out);
    let mut summary = json!({ "rows": rows.len(), "predicted": counts });
    if let Some(labels) = labels {
        let truth: Vec<Mechanism> = labels.iter().map(|l| l.parse()).collect::<Result<_>>()?;
        let predicted: Vec<Mechanism> = preds.iter().map(|p| p.label).collect();
        let metrics = evaluate(&truth, &predicted);
        let metrics_out = sibling(&a.out, "metrics.json");
        write_json(&metrics_out, &metrics)?;
        m.output(&metrics_out);
        summary["macro_f1"] = json!(metrics.macro_f1);
        summary["accuracy"] = json!(metrics.accuracy);
    }
    m.summary = summary;
    Ok(m)
}

fn decompose_cmd(ctx: &Ctx, name: &str, a: &DecomposeArgs) -> Result<Manifest> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let model = BoostedForest::load(&a.model)?;
    let g = load_graph(&a.graph)?;
    let log = AdoptionLog::load_csv(&a.log, &g, None)?;
    let rep = decompose(&model, &log, &g, &schedule(&a.shocks)?)?;
    let json_out = a.out_dir.join("decomposition.json");
    rep.write_json(&json_out)?;
    m.output(&json_out);
    let daily_out = a.out_dir.join("daily.csv");
    rep.write_daily_csv(&daily_out)?;
    m.output(&daily_out);
    let shares: serde_json::Map<String, Value> = Mechanism::ALL
        .iter()
        .map(|c| (c.name().to_string(), json!(rep.share(*c))))
        .collect();
    m.summary = json!({ "adoptions": rep.events.len(), "shares": shares });
    Ok(m)
}

fn order_test(ctx: &Ctx, name: &str, a: &OrderTestArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let g = load_graph(&a.graph)?;
    let log = AdoptionLog::load_csv(&a.log, &g, None)?;
    let res = degree_order_test(&g, &log, a.degree)?;
    write_json(&a.out, &res)?;
    m.output(&a.out);
    m.summary = serde_json::to_value(res)?;
    Ok(m)
}

fn detect(ctx: &Ctx, name: &str, a: &DetectArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let series = AdoptionSeries::load_csv(&a.series)?;
    let cfg = DetectConfig {
        min_count: a.min_count,
        window: a.window,
        z: a.z,
    };
    let ranges = detect_shocks(&series, &cfg)?;
    write_json(&a.out, &ranges)?;
    m.output(&a.out);
    m.summary = json!({ "shocks": ranges.len(), "peaks": ranges.iter().map(|r| r.peak_day).collect::<Vec<_>>() });
    Ok(m)
}

#[derive(Serialize)]
struct PeakFit {
    peak: usize,
    peak_count: u64,
    fit: crate::shocks::PowerLawFit,
}

fn fit_shock(ctx: &Ctx, name: &str, a: &FitShockArgs) -> Result<Manifest> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let series = AdoptionSeries::load_csv(&a.series)?;
    let mut peaks = a.peak.clone();
    if let Some(p) = &a.ranges {
        let ranges: Vec<ShockRange> = read_json(p)?;
        peaks.extend(ranges.iter().map(|r| r.peak_day));
    }
    peaks.sort_unstable();
    peaks.dedup();
    if let Some(&bad) = peaks.iter().find(|&&p| p >= series.len()) {
        return Err(LabError::invalid(format!("peak {bad} beyond the {}-day series", series.len())));
    }
    // each burst is fitted up to the next peak
    let mut fits = Vec::with_capacity(peaks.len());
    for (j, &p) in peaks.iter().enumerate() {
        let end = peaks.get(j + 1).copied().unwrap_or(series.len());
        let window = AdoptionSeries::new(series.counts[..end].to_vec());
        fits.push(PeakFit { peak: p, peak_count: series.counts[p], fit: fit_power_law(&window, p)? });
    }
    let top = fits.iter().map(|f| f.peak_count).max().unwrap_or(0).max(1) as f64;
    let schedule = ShockSchedule::new(
        fits.iter()
            .map(|f| Shock {
                tau: f.peak as Day,
                gamma: f.peak_count as f64 / top,
                alpha: f.fit.alpha,
            })
            .collect(),
    )?;
    let fits_out = a.out_dir.join("fits.json");
    write_json(&fits_out, &fits)?;
    m.output(&fits_out);
    let sched_out = a.out_dir.join("schedule.json");
    write_json(&sched_out, &schedule)?;
    m.output(&sched_out);
    m.summary = json!({
        "alpha": fits.iter().map(|f| f.fit.alpha).collect::<Vec<_>>(),
        "r_squared": fits.iter().map(|f| f.fit.r_squared).collect::<Vec<_>>(),
    });
    Ok(m)
}

fn treatment_kind(a: &MatchArgs, seed: u64) -> Result<TreatmentKind, CliError> {
    let kind = match (a.kind, a.placebo) {
        (TreatmentArg::Timing, PlaceboArg::None) => TreatmentKind::Timing { d: a.d },
        (TreatmentArg::Timing, PlaceboArg::Future) => TreatmentKind::PlaceboFuture { d: a.d },
        (TreatmentArg::Dose, PlaceboArg::None) => TreatmentKind::Dose,
        (TreatmentArg::Dose, PlaceboArg::Permute) => TreatmentKind::PlaceboPermuted { seed },
        (k, p) => {
            return Err(CliError::Usage(format!(
                "--placebo {} is not available with --kind {}",
                p.to_possible_value().map_or_else(String::new, |v| v.get_name().to_string()),
                k.to_possible_value().map_or_else(String::new, |v| v.get_name().to_string()),
            )))
        }
    };
    kind.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(kind)
}

fn match_cmd(ctx: &Ctx, name: &str, a: &MatchArgs) -> Result<Manifest, CliError> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let panel = match (&a.panel, &a.schema) {
        (Some(pp), Some(sp)) => {
            let schema: PanelSchemaFile = read_json(sp)?;
            TreatmentPanel::load_csv(pp, &schema)?
        }
        _ => {
            let kind = treatment_kind(a, ctx.seed)?;
            let (Some(gp), Some(lp)) = (&a.graph, &a.log) else {
                return Err(CliError::Usage("--graph and --log are required without --panel".into()));
            };
            let g = load_graph(gp)?;
            let log = AdoptionLog::load_csv(lp, &g, None)?;
            let mut source = NetworkCovariates::new(&g, &log)?;
            if let Some(sp) = &a.static_covariates {
                let (names, cols) = node_table(sp, &g, None)?;
                for (n, c) in names.iter().zip(cols) {
                    source = source.with_static(n, c)?;
                }
            }
            let opts = PanelOptions {
                kind,
                direction: a.direction,
                days: a.first_day.zip(a.last_day),
            };
            build_panel(&g, &log, &source, &opts)?
        }
    };
    if a.export_panel {
        let panel_out = a.out_dir.join("panel.csv");
        panel.write_csv(&panel_out)?;
        m.output(&panel_out);
        let schema_out = a.out_dir.join("panel.schema.json");
        write_json(&schema_out, &panel.schema_file())?;
        m.output(&schema_out);
    }
    ctx.note(format!("matching {} panel rows", panel.len()));
    let pcfg = PropensityConfig {
        min_rows_per_level: a.min_rows_per_level,
        ..Default::default()
    };
    let mcfg = MatchConfig {
        caliper_mult: a.caliper,
        shortlist_k: a.shortlist,
        ..Default::default()
    };
    let rep = estimate(&panel, &pcfg, &mcfg)?;

    let pairs_out = a.out_dir.join("pairs.csv");
    rep.write_pairs_csv(&pairs_out)?;
    m.output(&pairs_out);
    let levels: Vec<Value> = rep
        .levels
        .iter()
        .map(|l| json!({ "level": l.level, "label": l.label, "matched": l.matched, "naive": l.naive, "daily": l.daily }))
        .collect();
    let risk_out = a.out_dir.join("risk.json");
    write_json(&risk_out, &json!({ "kind": rep.kind, "propensity": rep.propensity, "levels": levels }))?;
    m.output(&risk_out);
    let days: Vec<Value> = rep
        .days
        .iter()
        .map(|d| {
            let mut v = serde_json::to_value(d).unwrap_or(Value::Null);
            if let Some(o) = v.as_object_mut() {
                o.remove("pairs");
                o.remove("unmatched");
                o.insert("n_pairs".into(), json!(d.pairs.len()));
            }
            v
        })
        .collect();
    let diag: Vec<_> = rep.levels.iter().map(|l| &l.diagnostics).collect();
    let diag_out = a.out_dir.join("diagnostics.json");
    write_json(&diag_out, &json!({ "levels": diag, "days": days }))?;
    m.output(&diag_out);
    m.summary = json!({
        "rows": panel.len(),
        "pairs": rep.pairs().count(),
        "risk_ratios": rep.levels.iter().map(|l| json!({
            "level": l.label,
            "matched": l.matched.map(|t| t.rr),
            "naive": l.naive.map(|t| t.rr),
        })).collect::<Vec<_>>(),
    });
    Ok(m)
}

fn synth_graph(ctx: &Ctx, name: &str, a: &SynthGraphArgs) -> Result<Manifest> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let cfg = SynthConfig {
        n_nodes: a.nodes,
        exponent: a.exponent,
        mean_degree: a.mean_degree,
        homophily: a.homophily,
        trait_fraction: a.trait_fraction,
        seed: ctx.seed,
    };
    let (g, traits) = gen_graph(&cfg)?;
    let graph_out = a.out_dir.join("graph.csv");
    g.write_edge_list(&graph_out)?;
    m.output(&graph_out);
    let traits_out = a.out_dir.join("traits.csv");
    let mut w = csv::Writer::from_path(&traits_out)?;
    w.write_record(["node", "trait"])?;
    for (i, t) in traits.iter().enumerate() {
        w.write_record([g.external_id(i), &t.to_string()])?;
    }
    w.flush().map_err(|e| LabError::io(&traits_out, e))?;
    m.output(&traits_out);
    let max_in = (0..g.node_count()).map(|i| g.in_degree(i)).max().unwrap_or(0);
    let max_out = (0..g.node_count()).map(|i| g.out_degree(i)).max().unwrap_or(0);
    m.summary = json!({ "nodes": g.node_count(), "edges": g.edge_count(), "max_in_degree": max_in, "max_out_degree": max_out });
    Ok(m)
}

fn synth_homophily(ctx: &Ctx, name: &str, a: &HomophilyLogArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let g = load_graph(&a.graph)?;
    let (_, cols) = node_table(&a.traits, &g, None)?;
    let traits: Vec<u8> = cols[0]
        .iter()
        .map(|&t| if t == 0.0 || t == 1.0 { Ok(t as u8) } else { Err(LabError::invalid(format!("trait {t} is not 0 or 1"))) })
        .collect::<Result<_>>()?;
    let log = gen_homophily_adoptions(&traits, &[a.rate0, a.rate1], a.horizon, ctx.seed)?;
    log.write_csv(&a.out, &g)?;
    m.output(&a.out);
    m.summary = json!({ "adopters": log.len() });
    Ok(m)
}

fn synth_cascade(ctx: &Ctx, name: &str, a: &SynthCascadeArgs) -> Result<Manifest> {
    ensure_dir(&a.out_dir)?;
    let mut m = ctx.manifest(name, &a.out_dir, a)?;
    let g = load_graph(&a.graph)?;
    let params = MechanismParams::uniform(g.node_count(), a.beta, a.phi, a.activity, a.r)
        .with_shocks(schedule(&a.shocks)?, a.shock_prob);
    let cfg = CascadeConfig {
        stop_fraction: a.stop_fraction,
        horizon_days: a.horizon,
        seeds: if a.seeds == 0 { Seeding::None } else { Seeding::Count(a.seeds) },
        enabled: MechanismSet::ALL,
    };
    let (log, real) = match a.mechanism {
        Some(mech) => {
            let pc = gen_pure_cascade(&g, mech, &params, &cfg, ctx.seed)?;
            (pc.log, pc.realization)
        }
        None => {
            let real = crate::cascade::run_realization(&g, &params, &cfg, ctx.seed, 0)?;
            let recs = real.events.iter().map(|e| crate::Adoption { node: e.node, day: e.day }).collect();
            (AdoptionLog::new(recs, 0, real.stop_day)?, real)
        }
    };
    let log_out = a.out_dir.join("log.csv");
    log.write_csv(&log_out, &g)?;
    m.output(&log_out);
    let events_out = a.out_dir.join("events.jsonl");
    write_events_jsonl(&events_out, &real.events)?;
    m.output(&events_out);
    let series_out = a.out_dir.join("series.csv");
    AdoptionSeries::new(log.daily_counts()).write_csv(&series_out)?;
    m.output(&series_out);
    m.summary = json!({
        "adopters": log.len(),
        "stop_day": real.stop_day,
        "stop_reason": real.stop_reason,
        "adopted_fraction": real.adopted_fraction,
    });
    Ok(m)
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn collect_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| LabError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_manifests(&p, out)?;
        } else if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".manifest.json")) {
            out.push(p);
        }
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn report(ctx: &Ctx, name: &str, a: &ReportArgs) -> Result<Manifest> {
    let dir = dir_of(&a.out);
    ensure_dir(&dir)?;
    let mut m = ctx.manifest(name, &dir, a)?;
    let own = a.out.with_file_name(format!("{name}.manifest.json"));
    let mut files = Vec::new();
    collect_manifests(&a.dir, &mut files)?;
    files.retain(|p| !same_file(p, &own));
    files.sort();
    if files.is_empty() {
        return Err(LabError::EmptyInput(a.dir.clone()));
    }
    let mut md = String::from("# Run report\n");
    let mut stages = Vec::new();
    for f in &files {
        let v: Value = read_json(f)?;
        let command = v["command"].as_str().unwrap_or("?").to_string();
        let stage_dir = match f.parent().and_then(|p| p.strip_prefix(&a.dir).ok()) {
            Some(p) if !p.as_os_str().is_empty() => p.display().to_string(),
            _ => ".".to_string(),
        };
        md.push_str(&format!(
            "\n## {command}\n\ndirectory: `{}`\n\nseed: {}\n\n",
            stage_dir,
            render_value(&v["seed"])
        ));
        md.push_str("| output | bytes |\n|---|---|\n");
        for o in v["outputs"].as_array().into_iter().flatten() {
            md.push_str(&format!("| {} | {} |\n", render_value(&o["path"]), render_value(&o["bytes"])));
        }
        if let Some(s) = v["summary"].as_object() {
            md.push('\n');
            for (k, val) in s {
                md.push_str(&format!("- {k}: {}\n", render_value(val)));
            }
        }
        stages.push(command);
    }
    std::fs::write(&a.out, md).map_err(|e| LabError::io(&a.out, e))?;
    m.output(&a.out);
    m.summary = json!({ "stages": stages });
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Lab(LabError::invalid("x")).exit_code(), 2);
        let nc = LabError::NoConvergence { what: "propensity", iterations: 100 };
        assert_eq!(CliError::Lab(nc).exit_code(), 3);
    }

    #[test]
    fn config_merges_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "runs = 7\nseed = 3\nquiet = true\nout = \"x.jsonl\"\n").unwrap();
        let argv: Vec<String> = ["prog", "simulate", "--config", cfg.to_str().unwrap(), "--seed", "9"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let merged = merge_config(argv).unwrap();
        assert!(merged.windows(2).any(|w| w == ["--runs", "7"]));
        assert!(merged.windows(2).any(|w| w == ["--seed", "9"]));
        assert!(!merged.windows(2).any(|w| w == ["--seed", "3"]));
        assert!(merged.contains(&"--quiet".to_string()));
    }

    #[test]
    fn nested_config_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[simulate]\nruns = 7\n").unwrap();
        let argv = vec!["prog".to_string(), "--config".into(), cfg.to_string_lossy().into_owned()];
        assert_eq!(merge_config(argv).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/model.json"), "metrics.json"), PathBuf::from("out/model.metrics.json"));
        assert_eq!(dir_of(Path::new("model.json")), PathBuf::from("."));
    }

    #[test]
    fn incompatible_placebo_is_usage() {
        let cli = Cli::try_parse_from([
            "prog", "match", "--graph", "g", "--log", "l", "--kind", "timing", "--placebo", "permute", "--out-dir", "o",
        ])
        .unwrap();
        let Command::Match(a) = &cli.command else { unreachable!() };
        assert_eq!(treatment_kind(a, 0).unwrap_err().exit_code(), 1);
    }
}
