fn main() {
    std::process::exit(forager_sim::cli::run_cli(std::env::args_os()));
}
