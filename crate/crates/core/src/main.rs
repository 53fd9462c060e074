fn main() {
    std::process::exit(mmrerank::cli::main_with_args(std::env::args_os()));
}
