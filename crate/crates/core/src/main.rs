fn main() {
    std::process::exit(wavekit::cli::run(std::env::args_os()));
}
