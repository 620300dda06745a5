fn main() {
    std::process::exit(ckn_lab::cli::main_entry());
}
