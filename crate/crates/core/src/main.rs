fn main() {
    std::process::exit(ghost_core::harness::cli::run(std::env::args_os()));
}
