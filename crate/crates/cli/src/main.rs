fn main() {
    std::process::exit(ildrive_cli::run(std::env::args_os()));
}
