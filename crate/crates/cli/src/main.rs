fn main() {
    std::process::exit(t3kit::run(std::env::args_os()));
}
