fn main() {
    std::process::exit(emochain::cli::run(std::env::args_os()));
}
