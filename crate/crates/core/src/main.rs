fn main() {
    std::process::exit(sba::cli::run(std::env::args_os()));
}
