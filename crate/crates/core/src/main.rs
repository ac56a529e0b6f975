fn main() { std::process::exit(rredmd::cli::main()); }
