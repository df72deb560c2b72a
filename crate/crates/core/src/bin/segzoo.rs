fn main() {
    std::process::exit(segzoo::commands::main_with_args(std::env::args_os()));
}
