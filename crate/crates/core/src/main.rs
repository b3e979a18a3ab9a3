fn main() {
    std::process::exit(ngfreg::cli::run(std::env::args_os()));
}
