fn main() {
    std::process::exit(frac_hessian::cli::run(std::env::args_os()));
}
