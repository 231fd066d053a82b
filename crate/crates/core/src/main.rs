use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = formrl::cli::Cli::parse();
    if let Err(error) = formrl::cli::run(cli) {
        eprintln!("error: {error}");
        std::process::exit(formrl::cli::exit_code(&error));
    }
}
