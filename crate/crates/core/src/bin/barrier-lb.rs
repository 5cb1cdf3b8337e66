fn main() {
    std::process::exit(barrier_lb::cli::main_with_args(std::env::args_os()));
}
