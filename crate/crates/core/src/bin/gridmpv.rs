fn main() {
    gridmpv::cli::init_logging();
    std::process::exit(gridmpv::cli::run(std::env::args_os()));
}
