fn main() {
    std::process::exit(weyl_cli::run(std::env::args_os()));
}
