fn main() {
    std::process::exit(doha::cli::main_with_args(std::env::args_os()));
}
