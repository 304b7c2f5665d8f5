fn main() {
    std::process::exit(qsdlab::cli::run(std::env::args_os()));
}
