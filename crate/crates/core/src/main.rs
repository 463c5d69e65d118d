fn main() {
    std::process::exit(metatask::cli::run(std::env::args_os()));
}
