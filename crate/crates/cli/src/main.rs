fn main() {
    std::process::exit(cdpr_cli::run(std::env::args_os()));
}
