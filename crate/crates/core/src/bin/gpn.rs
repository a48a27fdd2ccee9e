fn main() {
    std::process::exit(gpn::cli::run(std::env::args_os()));
}
