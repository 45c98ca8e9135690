use clap::Parser;
use tabstruct::cli::{run, Cli};
use tabstruct::train::deterministic_requested;

fn main() {
    if deterministic_requested() && std::env::var_os("RAYON_NUM_THREADS").is_none() {
        // Single-threaded kernels keep floating-point reductions in a fixed order.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
