fn main() {
    std::process::exit(paramdelta::cli::main());
}
