fn main() {
    std::process::exit(vrnn_cli::run(std::env::args_os()));
}
