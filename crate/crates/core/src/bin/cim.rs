fn main() {
    std::process::exit(class_interference::cli::run(std::env::args_os()));
}
