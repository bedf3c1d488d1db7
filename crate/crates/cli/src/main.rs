fn main() {
    std::process::exit(siv_cli::run(std::env::args_os()));
}
