fn main() {
    std::process::exit(kborda::cli::run(std::env::args_os()));
}
