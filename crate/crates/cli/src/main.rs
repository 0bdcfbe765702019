fn main() { std::process::exit(smcurve_cli::run(std::env::args().collect())); }
