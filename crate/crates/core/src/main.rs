fn main() {
    std::process::exit(mutvae::cli::run(std::env::args_os()));
}
