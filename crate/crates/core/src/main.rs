use mmrec::cli;

fn main() {
    let cli = match cli::parse_args(std::env::args_os()) {
        Ok(cli) => cli,
        Err(code) => std::process::exit(code),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filters = std::env::var("RUST_LOG").unwrap_or_else(|_| level.to_string());
    // the HTTP client logs request URLs; the endpoint must never reach the log
    env_logger::Builder::new()
        .parse_filters(&filters)
        .filter_module("ureq", log::LevelFilter::Off)
        .filter_module("ureq_proto", log::LevelFilter::Off)
        .init();
    std::process::exit(cli::execute(&cli));
}
