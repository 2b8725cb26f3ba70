fn main() {
    std::process::exit(homog_core::cli::run(std::env::args_os()));
}
