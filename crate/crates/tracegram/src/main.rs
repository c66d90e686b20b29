fn main() {
    std::process::exit(tracegram::cli::run(std::env::args_os()));
}
