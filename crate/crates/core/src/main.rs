fn main() {
    std::process::exit(wsmlm_core::cli::main());
}
