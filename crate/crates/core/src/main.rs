fn main() {
    std::process::exit(plausrank::cli::run(std::env::args_os()));
}
