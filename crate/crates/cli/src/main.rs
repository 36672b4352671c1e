fn main() {
    std::process::exit(weakkam::run(std::env::args_os()));
}
