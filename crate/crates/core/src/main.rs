fn main() {
    std::process::exit(finegrain::cli::main_with_args(std::env::args_os()));
}
