use clap::Parser;

use joint_asr::cli::{exit_code, init_threads, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = init_threads().and_then(|()| run(cli)).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    });
    std::process::exit(code);
}
