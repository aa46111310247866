fn main() {
    std::process::exit(facile::cli::cli_main(std::env::args_os()));
}
