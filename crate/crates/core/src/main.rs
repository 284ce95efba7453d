fn main() {
    std::process::exit(mortcast::cli::main_entry());
}
