fn main() {
    std::process::exit(adr_maint::cli::main());
}
