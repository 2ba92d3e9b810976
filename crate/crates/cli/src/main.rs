fn main() {
    std::process::exit(cmmlp_cli::run(std::env::args_os()));
}
