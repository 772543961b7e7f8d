fn main() {
    std::process::exit(hmmlyap::cli::run(std::env::args_os()));
}
