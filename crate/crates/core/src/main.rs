fn main() {
    std::process::exit(negotiation::cli::app::main());
}
