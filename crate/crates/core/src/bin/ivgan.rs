fn main() {
    std::process::exit(ivgan::cli::run(std::env::args_os()));
}
