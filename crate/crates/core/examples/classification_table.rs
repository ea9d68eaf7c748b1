//! Cross-validated detector comparison over every feature family and crop.
//! Prints the discriminative-power table in the compact layout.
//!
//! cargo run --release --example classification_table -- [count]

use tamperguard::config::RunConfig;
use tamperguard::evaluation::{run_classification_experiment, ExperimentReport, Layout};
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

    let cells = run_classification_experiment(
        &sets,
        &cfg.models_list()?,
        &cfg.models,
        &cfg.cv_spec(),
        cfg.stage_seed("evaluate"),
    )?;
    let report = ExperimentReport {
        table1: cells,
        ..Default::default()
    };
    print!("{}", report.table1_csv(Layout::Paper));
    Ok(())
}
