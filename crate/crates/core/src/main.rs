fn main() {
    if let Err(e) = selfeval::cli::run_from(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
