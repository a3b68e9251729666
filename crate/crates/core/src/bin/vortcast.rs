fn main() {
    std::process::exit(vortcast::cli::dispatch(std::env::args_os()));
}
