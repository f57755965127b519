fn main() {
    std::process::exit(mapc_cli::run(std::env::args_os()));
}
