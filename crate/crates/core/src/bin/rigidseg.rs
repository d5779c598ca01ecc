fn main() {
    std::process::exit(rigidseg::cli::run(std::env::args_os()));
}
