fn main() { std::process::exit(kroncov::cli::run()); }
