fn main() {
    std::process::exit(linescope::app::run(std::env::args_os()));
}
