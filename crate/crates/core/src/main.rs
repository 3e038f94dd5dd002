fn main() {
    std::process::exit(zowarmup::cli::main());
}
