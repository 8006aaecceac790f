fn main() {
    std::process::exit(eigenfit::cli::main_with_args(std::env::args_os()));
}
