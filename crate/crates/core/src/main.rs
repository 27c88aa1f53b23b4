fn main() {
    std::process::exit(polyscope::cli::run(std::env::args_os()));
}
