fn main() {
    std::process::exit(gazeaug::cli::main());
}
