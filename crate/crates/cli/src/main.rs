fn main() {
    std::process::exit(graymod_cli::commands::run(std::env::args_os()));
}
