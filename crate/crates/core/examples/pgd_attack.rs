//! Trains the victim on a few clean frames and attacks one defective frame.
//!
//! cargo run --release --example pgd_attack

use tamperguard::attack::{pgd_attack, train_victim, AttackSpec, VictimSpec};
use tamperguard::imaging::{synthesize, CorpusSpec, Label, VisualClass};

fn main() -> tamperguard::Result<()> {
    let corpus = synthesize(&CorpusSpec {
        count: 40,
        ..CorpusSpec::default()
    })?;
    let (train, rest): (Vec<_>, Vec<_>) = corpus.iter().partition(|s| s.label == Label::Clean);
    let images: Vec<_> = train.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<u8> = train.iter().map(|s| s.class.as_target()).collect();

    let spec = VictimSpec {
        epochs: 50,
        ..VictimSpec::default()
    };
    let fit = train_victim(&images, &labels, &spec, 7)?;
    println!(
        "victim: {} frames, loss {:.4} -> {:.4}",
        images.len(),
        fit.losses[0],
        fit.losses[fit.losses.len() - 1]
    );

    let target = rest
        .iter()
        .find(|s| s.class == VisualClass::Defect)
        .expect("a defect frame");
    let attack = AttackSpec::default();
    let adv = pgd_attack(&fit.model, &target.image, 1, &attack, 11)?;
    let linf = adv
        .pixels()
        .iter()
        .zip(target.image.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{}: loss {:.4} -> {:.4}, |delta|_inf = {linf:.5} (epsilon {:.5})",
        target.id,
        fit.model.loss(&target.image, 1)?,
        fit.model.loss(&adv, 1)?,
        attack.epsilon
    );
    Ok(())
}
