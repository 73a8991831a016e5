fn main() {
    std::process::exit(multiver::cli::main())
}
