fn main() {
    std::process::exit(wavunet::cli::run(std::env::args_os()));
}
