fn main() {
    std::process::exit(htf::cli::run_cli(std::env::args_os()));
}
