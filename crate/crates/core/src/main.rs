fn main() {
    std::process::exit(roughflow::cli::main_with_args(std::env::args_os()));
}
