fn main() {
    std::process::exit(fas_lim::cli::run(std::env::args_os()));
}
