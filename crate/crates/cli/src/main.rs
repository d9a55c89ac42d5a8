use clap::Parser;

fn main() {
    let cli = odm_cli::Cli::parse();
    match odm_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
