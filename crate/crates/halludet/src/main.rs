fn main() {
    let code = halludet::cli::main_with_args(std::env::args().collect());
    std::process::exit(code);
}
