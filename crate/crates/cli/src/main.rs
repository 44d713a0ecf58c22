fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(homlab::run_command(&argv));
}
