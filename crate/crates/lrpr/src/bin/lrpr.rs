fn main() {
    std::process::exit(lrpr::cli::run_cli(std::env::args_os()));
}
