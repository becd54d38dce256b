fn main() {
    std::process::exit(dpngs_cli::run_cli(std::env::args_os()));
}
