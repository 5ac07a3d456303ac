fn main() {
    std::process::exit(mandator_sporades::cli::main_with_args(std::env::args_os()));
}
