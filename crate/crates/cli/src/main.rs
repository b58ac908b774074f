fn main() {
    std::process::exit(ppr_cert_cli::run(std::env::args_os()));
}
