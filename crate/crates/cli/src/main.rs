fn main() {
    std::process::exit(lambda_nas_cli::run_cli(std::env::args_os()));
}
