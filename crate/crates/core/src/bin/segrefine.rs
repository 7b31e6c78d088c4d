fn main() {
    std::process::exit(segrefine::pipeline::run(std::env::args_os()));
}
