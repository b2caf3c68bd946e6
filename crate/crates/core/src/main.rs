fn main() { std::process::exit(amodal_forge::cli::run()); }
