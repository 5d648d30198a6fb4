fn main() {
    std::process::exit(ovi_prior::cli::run(std::env::args_os()));
}
