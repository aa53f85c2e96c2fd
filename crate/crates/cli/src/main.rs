use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = comest_cli::Cli::parse();
    if let Err(err) = comest_cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(comest_cli::exit_code(&err));
    }
}
