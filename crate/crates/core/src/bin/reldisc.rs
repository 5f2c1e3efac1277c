fn main() {
    std::process::exit(reldisc::cli::run_from_args(std::env::args_os()));
}
