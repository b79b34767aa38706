fn main() {
    std::process::exit(dcca_cli::run(std::env::args_os()));
}
