use clap::Parser;

fn main() {
    let cli = imba_cli::Cli::parse();
    let code = match imba_cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            imba_cli::EXIT_ERROR
        }
    };
    std::process::exit(code);
}
