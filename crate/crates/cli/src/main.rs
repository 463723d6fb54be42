fn main() {
    std::process::exit(congestion_cli::run_cli(std::env::args_os()));
}
