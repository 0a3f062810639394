fn main() {
    std::process::exit(geodesic_lode::cli::run(std::env::args_os()));
}
