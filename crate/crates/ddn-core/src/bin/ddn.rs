fn main() {
    std::process::exit(ddn_core::cli::run());
}
