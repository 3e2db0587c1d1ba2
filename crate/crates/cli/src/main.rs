fn main() {
    std::process::exit(etaquot_cli::run(std::env::args_os()));
}
