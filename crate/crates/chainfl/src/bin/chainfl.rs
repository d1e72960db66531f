fn main() {
    std::process::exit(chainfl::cli::cli_main(std::env::args().skip(1)));
}
