fn main() {
    std::process::exit(levy_ou_cli::run(std::env::args_os()));
}
