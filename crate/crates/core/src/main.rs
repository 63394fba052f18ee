fn main() {
    std::process::exit(flames_core::cli::main());
}
