fn main() {
    std::process::exit(clayshape_cli::run(std::env::args_os()));
}
