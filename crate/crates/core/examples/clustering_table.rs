//! Unsupervised DBSCAN over every feature family and crop, scored against
//! the attacked/clean labels afterwards.
//!
//! cargo run --release --example clustering_table -- [count]

use tamperguard::config::RunConfig;
use tamperguard::evaluation::{run_clustering_experiment, ExperimentReport, Layout};
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
        &cfg.families()?,
        &cfg.variants()?,
        &cfg.feature_params(),
    )?;

    let report = ExperimentReport {
        table2: run_clustering_experiment(&sets, &cfg.models.dbscan)?,
        ..Default::default()
    };
    print!("{}", report.table2_csv(Layout::Paper));
    Ok(())
}
