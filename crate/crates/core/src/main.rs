fn main() {
    std::process::exit(visual_grammar::cli::run(std::env::args_os()));
}
