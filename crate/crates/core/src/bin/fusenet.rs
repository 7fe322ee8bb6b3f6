fn main() {
    std::process::exit(fusenet::cli::run());
}
