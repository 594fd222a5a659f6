fn main() {
    std::process::exit(sagin_mpquic::harness::cli::run_cli(std::env::args_os()));
}
