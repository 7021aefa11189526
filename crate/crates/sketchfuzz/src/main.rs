fn main() {
    std::process::exit(sketchfuzz::cli::run());
}
