fn main() {
    std::process::exit(mfamp::cli::run(std::env::args_os()));
}
