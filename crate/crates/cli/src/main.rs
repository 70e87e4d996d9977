fn main() {
    std::process::exit(gesturegan_cli::run(std::env::args_os()));
}
