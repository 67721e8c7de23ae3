fn main() {
    std::process::exit(flame_gaze::cli::run(std::env::args_os()));
}
