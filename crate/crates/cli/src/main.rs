fn main() {
    std::process::exit(btcwatch_cli::run(std::env::args_os()));
}
