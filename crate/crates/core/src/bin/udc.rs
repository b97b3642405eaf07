fn main() {
    std::process::exit(udc_core::cli::run(std::env::args_os()));
}
