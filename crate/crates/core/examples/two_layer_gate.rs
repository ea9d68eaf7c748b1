//! Fits a KMeans gate on SSIM features and screens fresh frames: tampered
//! frames are stopped, clean ones go on to the victim classifier.
//!
//! cargo run --release --example two_layer_gate

use tamperguard::config::RunConfig;
use tamperguard::detectors::DetectorKind;
use tamperguard::features::Family;
use tamperguard::guard::{gate, Decision, GateDetector};
use tamperguard::imaging::Variant;
use tamperguard::pipeline::{feature_sets, generate_frames, train_and_attack};

fn main() -> tamperguard::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.corpus.count = 80;
    cfg.attack.victim.train_size = 16;
    let mut frames = generate_frames(&cfg.corpus)?;
    let outcome = train_and_attack(&mut frames, &cfg.attack, cfg.stage_seed("attack"))?;

    // Fit on the first half, screen the second half.
    let (fit_frames, screen) = frames.split_at(frames.len() / 2);
    let set = &feature_sets(
        fit_frames,
        &[Family::Ssim],
        &[Variant::Original],
        &cfg.feature_params(),
    )?[0];
    let detector = GateDetector::fit(
        &set.features,
        &set.labels,
        Variant::Original,
        (cfg.corpus.width, cfg.corpus.height),
        DetectorKind::KMeans,
        &cfg.models,
        &cfg.feature_params(),
        None,
        cfg.stage_seed("gate"),
    )?;
    print!("{}", detector.describe());

    let mut correct = 0;
    for f in screen {
        let v = gate(&f.image, &detector, &outcome.victim.model)?;
        let tampered = v.decision == Decision::Tampered;
        correct += usize::from(tampered == (f.label.as_target() == 1));
        let second = v.second_layer_label.map_or("-", |c| c.as_str());
        println!(
            "{} {:<6} {:<8} score {:>8.3}  second layer {second}",
            f.id,
            f.label.as_str(),
            format!("{:?}", v.decision),
            v.score
        );
    }
    println!("{correct}/{} frames routed correctly", screen.len());
    Ok(())
}
