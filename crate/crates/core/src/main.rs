fn main() {
    std::process::exit(epigame::scenario_cli::run(std::env::args_os()));
}
