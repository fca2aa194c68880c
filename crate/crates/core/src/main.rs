fn main() {
    std::process::exit(haartest::cli::main_with(std::env::args_os()));
}
