fn main() {
    std::process::exit(csc_cli::run(std::env::args_os()));
}
