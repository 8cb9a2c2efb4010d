fn main() {
    std::process::exit(hybrid_squeeze::scenarios::cli_run(std::env::args_os()));
}
