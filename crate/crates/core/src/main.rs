fn main() {
    std::process::exit(volnp::cli::main_entry());
}
