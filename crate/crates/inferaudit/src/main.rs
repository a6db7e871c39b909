fn main() {
    std::process::exit(inferaudit::cli::run());
}
