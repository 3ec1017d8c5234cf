use clap::Parser;

fn main() {
    let env = env_logger::Env::new().filter_or("CARDMATCH_LOG", "warn");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
    let cli = cardmatch_cli::Cli::parse();
    let code = match cardmatch_cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            cardmatch_cli::EXIT_ERROR
        }
    };
    std::process::exit(code);
}
