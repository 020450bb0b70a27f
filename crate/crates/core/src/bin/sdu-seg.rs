fn main() {
    std::process::exit(sdu_seg::cli::main_with_args(std::env::args_os()));
}
