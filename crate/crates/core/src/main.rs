fn main() {
    std::process::exit(corrmark::cli::main_with_args(std::env::args_os()));
}
