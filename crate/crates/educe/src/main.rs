fn main() {
    std::process::exit(educe::cli::run(std::env::args_os()));
}
