fn main() {
    std::process::exit(dlotrack::cli::run(std::env::args_os()));
}
