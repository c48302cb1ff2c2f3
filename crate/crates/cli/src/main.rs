fn main() {
    std::process::exit(mscgm_cli::run(std::env::args_os()));
}
