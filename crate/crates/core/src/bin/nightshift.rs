fn main() {
    std::process::exit(nightshift::pipeline::cli::run(std::env::args_os()));
}
