fn main() {
    std::process::exit(qcloak::cli::main_with_args(std::env::args_os()));
}
