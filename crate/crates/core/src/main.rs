fn main() {
    std::process::exit(radial_plap::cli::run(std::env::args_os()));
}
