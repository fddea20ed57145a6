fn main() {
    std::process::exit(dynvocab::cli::run(std::env::args_os()));
}
