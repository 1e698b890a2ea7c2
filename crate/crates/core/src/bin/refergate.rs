fn main() {
    std::process::exit(refergate::cli::run(std::env::args_os()));
}
