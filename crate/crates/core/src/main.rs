fn main() {
    std::process::exit(contagion_lab::cli::dispatch(std::env::args_os()));
}
