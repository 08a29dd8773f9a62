fn main() {
    std::process::exit(scanforge_cli::run(std::env::args_os()));
}
