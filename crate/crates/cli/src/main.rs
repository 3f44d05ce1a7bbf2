fn main() {
    std::process::exit(hynd_cli::run_command(std::env::args_os()));
}
