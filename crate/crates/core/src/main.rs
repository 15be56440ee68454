fn main() {
    std::process::exit(smeta::cli::run(std::env::args().collect()));
}
