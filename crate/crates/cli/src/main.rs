fn main() {
    std::process::exit(blinkwatch_cli::run(std::env::args_os()));
}
