fn main() {
    std::process::exit(ggmc::cli::main_with_args(std::env::args_os()));
}
