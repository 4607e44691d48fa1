fn main() {
    std::process::exit(evmem::cli::run());
}
