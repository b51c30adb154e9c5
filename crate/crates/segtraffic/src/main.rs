fn main() {
    std::process::exit(segtraffic::cli::cli_main(std::env::args_os()));
}
