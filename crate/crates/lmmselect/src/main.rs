use clap::Parser;

fn main() {
    let cli = lmmselect::cli::Cli::parse();
    if let Err(e) = lmmselect::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code() as i32);
    }
}
