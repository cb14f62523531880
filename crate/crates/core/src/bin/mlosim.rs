fn main() {
    std::process::exit(mlosim::cli::main_with_args(std::env::args_os()));
}
