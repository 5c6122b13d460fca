fn main() {
    std::process::exit(proxbridge_cli::run(std::env::args_os()));
}
