fn main() { std::process::exit(spgp::cli::run()); }
