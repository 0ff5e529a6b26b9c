fn main() {
    std::process::exit(cmta::cli::run(std::env::args_os()));
}
