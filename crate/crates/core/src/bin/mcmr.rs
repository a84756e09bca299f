use clap::Parser;
use mcmr::cli::{run, Cli};

fn main() {
    mcmr::exec::init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
