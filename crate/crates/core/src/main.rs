fn main() {
    std::process::exit(tubedagger::cli::main());
}
