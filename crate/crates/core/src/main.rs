fn main() {
    std::process::exit(segrnn::cli::run(std::env::args()));
}
