fn main() {
    std::process::exit(eventcl::cli::run(std::env::args_os()));
}
