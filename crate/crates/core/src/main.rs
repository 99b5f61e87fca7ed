fn main() {
    std::process::exit(mixsim::cli_io::app::cli_main(std::env::args_os()));
}
