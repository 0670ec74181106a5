fn main() {
    std::process::exit(contrail::cli::run(std::env::args().skip(1)));
}
