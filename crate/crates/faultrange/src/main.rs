fn main() {
    std::process::exit(faultrange::cli::main_with_args(std::env::args_os()));
}
