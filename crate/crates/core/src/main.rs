fn main() {
    std::process::exit(consentchain::cli::main_with(std::env::args_os()));
}
