fn main() {
    std::process::exit(qfunc::cli::main_with_args(std::env::args_os()));
}
