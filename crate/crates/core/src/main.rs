use clap::Parser;

use rotor_tf::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("ROTOR_TF_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("configuration error: ROTOR_TF_THREADS: {e}");
                    std::process::exit(2);
                }
            }
            _ => {
                eprintln!("configuration error: ROTOR_TF_THREADS={v:?} is not a positive integer");
                std::process::exit(2);
            }
        }
    }
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
