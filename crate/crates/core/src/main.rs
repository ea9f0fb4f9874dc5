fn main() {
    std::process::exit(histagg::cli::run(std::env::args_os()));
}
