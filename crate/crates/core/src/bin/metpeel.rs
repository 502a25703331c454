fn main() {
    std::process::exit(metpeel::harness::cli_main(std::env::args_os()));
}
