fn main() {
    std::process::exit(story_reorg::cli::run(std::env::args_os()));
}
