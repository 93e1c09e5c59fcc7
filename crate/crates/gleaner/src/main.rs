fn main() {
    std::process::exit(gleaner::cli::run());
}
