fn main() {
    std::process::exit(oneplusone::cli::main());
}
