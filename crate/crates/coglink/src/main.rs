fn main() {
    std::process::exit(coglink::cli::run(std::env::args_os()));
}
