//! Prints the fully resolved default configuration and its hash. Save the
//! output as a starting point for `--config`.
//!
//! cargo run --example default_config > run.toml

use tamperguard::config::RunConfig;

fn main() {
    let cfg = RunConfig::default();
    println!("# config hash {}", cfg.hash());
    print!("{}", cfg.to_toml());
}
