fn main() {
    std::process::exit(thinner::cli::main_from_args(std::env::args_os()));
}
