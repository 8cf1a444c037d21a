//! `confgame` command-line entry point.

fn main() {
    let code = confgame_harness::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
