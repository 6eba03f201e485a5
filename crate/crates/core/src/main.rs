fn main() { let code = aewatch::cli::run(); std::process::exit(code); }
