fn main() {
    std::process::exit(brainseg::cli::run());
}
