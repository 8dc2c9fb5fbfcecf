fn main() {
    std::process::exit(rodeo::cli::cli_run(std::env::args()));
}
