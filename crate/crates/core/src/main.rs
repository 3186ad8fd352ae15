fn main() {
    std::process::exit(touchnet::cli::run(std::env::args_os()));
}
