fn main() {
    std::process::exit(earlybranch::cli::run(std::env::args_os()));
}
