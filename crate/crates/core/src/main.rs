fn main() {
    std::process::exit(madsa_core::cli::run(std::env::args_os()));
}
