fn main() {
    std::process::exit(bimlab_cli::main_with_args(std::env::args().collect()));
}
