fn main() {
    std::process::exit(amps_cli::run(std::env::args().skip(1)));
}
