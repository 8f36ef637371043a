use clap::Parser;

fn main() {
    let cli = prismatic_cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = prismatic_cli::run(cli, &mut stdout.lock()) {
        eprintln!("{}", e.to_json());
        std::process::exit(1);
    }
}
