fn main() {
    std::process::exit(steer_cli::run(std::env::args_os()));
}
