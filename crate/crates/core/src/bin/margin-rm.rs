fn main() {
    std::process::exit(margin_rm::cli::main());
}
