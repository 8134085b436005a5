fn main() {
    std::process::exit(pnorm_erm_cli::run(std::env::args_os()));
}
