fn main() {
    std::process::exit(aquavis::cli::run(std::env::args_os()));
}
