fn main() {
    std::process::exit(inpaint::cli::main_with_args(std::env::args_os()));
}
