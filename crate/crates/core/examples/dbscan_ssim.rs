//! Attacks half the corpus and clusters SSIM features with DBSCAN, without
//! labels. Every attacked frame should land in its own dense cluster.
//!
//! cargo run --release --example dbscan_ssim -- [count]

use tamperguard::config::RunConfig;
use tamperguard::detectors::dbscan;
use tamperguard::evaluation::cluster_agreement;
use tamperguard::features::Family;
use tamperguard::imaging::Variant;
use tamperguard::pipeline::{feature_sets, generate_frames, train_and_attack};

fn main() -> tamperguard::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.corpus.count = std::env::args()
        .nth(1)
        .map_or(200, |s| s.parse().expect("count"));
    let mut frames = generate_frames(&cfg.corpus)?;
    train_and_attack(&mut frames, &cfg.attack, cfg.stage_seed("attack"))?;

    let sets = feature_sets(
        &frames,
        &[Family::Ssim],
        &Variant::ALL,
        &cfg.feature_params(),
    )?;
    for set in &sets {
        let d = cfg.models.dbscan;
        let fit = dbscan(&set.features.to_matrix(), d.eps, d.min_pts)?;
        let truth: Vec<i64> = set.labels.iter().map(|&l| i64::from(l)).collect();
        let a = cluster_agreement(&fit.labels, &truth)?;
        println!(
            "{:<11} clusters {}  noise {:>3}  homogeneity {:.4}  completeness {:.4}",
            set.variant.as_str(),
            a.n_clusters,
            fit.n_noise,
            a.homogeneity,
            a.completeness
        );
    }
    Ok(())
}
