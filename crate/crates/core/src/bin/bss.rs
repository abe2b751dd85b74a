fn main() {
    std::process::exit(bss_core::cli::dispatch(std::env::args_os()));
}
