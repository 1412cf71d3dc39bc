fn main() {
    std::process::exit(aerogt::cli::run(std::env::args_os()));
}
