fn main() {
    std::process::exit(faithsel::cli::dispatch(std::env::args_os()));
}
