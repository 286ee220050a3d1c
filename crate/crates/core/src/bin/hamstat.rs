fn main() {
    std::process::exit(hamstat::cli::main_with_args(std::env::args_os()));
}
