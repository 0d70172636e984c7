fn main() {
    std::process::exit(pmefront::cli::main_with_args(std::env::args_os()));
}
