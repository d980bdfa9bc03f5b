fn main() {
    std::process::exit(dpacct_cli::run(std::env::args_os()));
}
