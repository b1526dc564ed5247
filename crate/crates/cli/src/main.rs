fn main() {
    std::process::exit(sociorec_cli::run_command(std::env::args_os()));
}
