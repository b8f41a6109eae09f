fn main() {
    std::process::exit(himae::cli::run(std::env::args_os()));
}
