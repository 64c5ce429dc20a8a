fn main() {
    std::process::exit(memeweaver::cli::run());
}
