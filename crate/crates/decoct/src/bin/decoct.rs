fn main() {
    std::process::exit(decoct::cli::run());
}
