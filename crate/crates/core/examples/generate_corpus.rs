//! Renders the synthetic inspection corpus to disk.
//!
//! cargo run --release --example generate_corpus -- [out_dir] [count]

use std::path::PathBuf;

use tamperguard::imaging::{generate_corpus, CorpusSpec, Label};

fn main() -> tamperguard::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "corpus_demo".into()));
    let count = args
        .next()
        .map_or(60, |s| s.parse().expect("count must be an integer"));
    let spec = CorpusSpec {
        count,
        ..CorpusSpec::default()
    };

    let manifest = generate_corpus(&spec, &out)?;
    let attacked = manifest
        .entries
        .iter()
        .filter(|e| e.label == Label::Attacked)
        .count();
    println!(
        "{} frames of {}x{} in {} ({attacked} designated attack targets)",
        manifest.entries.len(),
        spec.width,
        spec.height,
        out.display()
    );
    Ok(())
}
