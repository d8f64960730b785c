fn main() {
    std::process::exit(eigsal_cli::run(std::env::args_os()));
}
