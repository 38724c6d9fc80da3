fn main() {
    std::process::exit(rff_bench::cli::run(std::env::args_os()));
}
