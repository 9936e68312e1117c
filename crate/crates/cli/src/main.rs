fn main() {
    std::process::exit(protoshot_cli::run(std::env::args_os()));
}
