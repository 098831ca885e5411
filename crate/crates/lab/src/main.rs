fn main() {
    std::process::exit(una_lab::cli::main_with_args(std::env::args_os()));
}
