fn main() {
    std::process::exit(carleman::cli::main_with_args(std::env::args_os()));
}
