fn main() {
    std::process::exit(deepfgs::cli::run(std::env::args_os()));
}
