fn main() {
    std::process::exit(contpath::cli::main_with_args(std::env::args_os()));
}
