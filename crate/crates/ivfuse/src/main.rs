fn main() {
    std::process::exit(ivfuse::cli::run(std::env::args_os()));
}
