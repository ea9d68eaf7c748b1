//! Compares local SSIM against a white reference for a clean frame and its
//! PGD counterpart. The perturbation raises window variance, which drags the
//! contrast term down.
//!
//! cargo run --release --example ssim_against_white

use tamperguard::config::RunConfig;
use tamperguard::features::{ssim_map, SsimParams};
use tamperguard::imaging::{white_reference, Label};
use tamperguard::pipeline::{generate_frames, train_and_attack};

fn summary(map: &[f64]) -> (f64, f64, f64) {
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, lo, hi)
}

fn main() -> tamperguard::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.corpus.count = 24;
    cfg.attack.victim.train_size = 8;
    let clean = generate_frames(&cfg.corpus)?;
    let mut attacked = clean.clone();
    train_and_attack(&mut attacked, &cfg.attack, cfg.stage_seed("attack"))?;

    let p = SsimParams::default();
    let white = white_reference(cfg.corpus.width, cfg.corpus.height)?;
    let i = clean
        .iter()
        .position(|f| f.label == Label::Attacked)
        .expect("an attack target");
    for (name, img) in [("clean", &clean[i].image), ("attacked", &attacked[i].image)] {
        let (mean, lo, hi) = summary(&ssim_map(img, &white, &p)?);
        println!(
            "{name:>8} {}: mean {mean:.4}  min {lo:.4}  max {hi:.4}",
            clean[i].id
        );
    }
    Ok(())
}
