fn main() {
    std::process::exit(posat_core::cli::main_entry());
}
