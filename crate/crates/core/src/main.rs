fn main() {
    std::process::exit(sdtr::cli::run(std::env::args_os()));
}
