fn main() {
    std::process::exit(spad_ap_core::cli::run(std::env::args_os()));
}
