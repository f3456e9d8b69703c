fn main() {
    std::process::exit(block_minres::cli::run());
}
