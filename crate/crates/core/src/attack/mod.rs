//! Victim classifier and the projected-gradient-descent attack that produces
//! the tampered half of the corpus.

mod victim;

pub use victim::{train_victim, VictimFit, VictimModel, VictimSpec};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::seeds;

/// L-infinity PGD hyperparameters, in intensity units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub random_start: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iterations: 10,
            random_start: true,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.alpha > 0.0) || self.iterations == 0 {
            return Err(Error::Config(format!(
                "attack needs epsilon >= 0, alpha > 0, iterations >= 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Untargeted PGD: repeated signed-gradient ascent on the victim loss,
/// projected onto the epsilon ball around the input and onto `[0, 1]`.
pub fn pgd_attack(
    model: &VictimModel,
    img: &GrayImage,
    label: u8,
    spec: &AttackSpec,
    seed: u64,
) -> Result<GrayImage> {
    spec.validate()?;
    if img.len() != model.input_len() {
        return Err(Error::Dimension(format!(
            "victim expects {} pixels, image has {}",
            model.input_len(),
            img.len()
        )));
    }
    let origin = img.pixels();
    let eps = spec.epsilon;
    let project = |v: f64, o: f64| v.clamp(o - eps, o + eps).clamp(0.0, 1.0);

    let mut x = origin.to_vec();
    if spec.random_start && eps > 0.0 {
        let mut rng = seeds::rng(seed);
        for (v, &o) in x.iter_mut().zip(origin) {
            *v = project(o + rng.random_range(-eps..=eps), o);
        }
    }
    for _ in 0..spec.iterations {
        let grad = model.gradient_of(&x, label);
        for ((v, &o), g) in x.iter_mut().zip(origin).zip(grad) {
            *v = project(*v + spec.alpha * sign(g), o);
        }
    }
    GrayImage::new(img.width(), img.height(), x)
}

/// Attacks a batch in parallel; image `i` uses a seed derived from `(seed, i)`.
pub fn pgd_batch(
    model: &VictimModel,
    images: &[(&GrayImage, u8)],
    spec: &AttackSpec,
    seed: u64,
) -> Result<Vec<GrayImage>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, (img, label))| {
            pgd_attack(
                model,
                img,
                *label,
                spec,
                seeds::derive_index(seed, i as u64),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn linear_model() -> VictimModel {
        let w1 = Array2::from_shape_vec((1, 4), vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        VictimModel::from_parts(vec![0.0; 4], w1, vec![0.1], vec![1.5], -0.2).unwrap()
    }

    fn img() -> GrayImage {
        GrayImage::new(2, 2, vec![0.2, 0.4, 0.95, 0.8]).unwrap()
    }

    #[test]
    fn zero_budget_is_identity() {
        let spec = AttackSpec {
            epsilon: 0.0,
            ..AttackSpec::default()
        };
        assert_eq!(
            pgd_attack(&linear_model(), &img(), 0, &spec, 1).unwrap(),
            img()
        );
    }

    #[test]
    fn single_step_projection() {
        let spec = AttackSpec {
            epsilon: 0.1,
            alpha: 0.2,
            iterations: 1,
            random_start: false,
        };
        let out = pgd_attack(&linear_model(), &img(), 0, &spec, 1).unwrap();
        let grad = linear_model().input_gradient(&img(), 0).unwrap();
        for ((&o, &a), g) in img().pixels().iter().zip(out.pixels()).zip(grad) {
            let expected = (o + 0.1 * sign(g)).clamp(0.0, 1.0);
            assert!(
                (a - expected).abs() < 1e-15,
                "{o} -> {a}, expected {expected}"
            );
        }
        // Pixel 2 (0.95) moves up and is clipped at 1.0; pixel 3 has zero weight.
        assert_eq!(out.pixels()[2], 1.0);
        assert_eq!(out.pixels()[3], 0.8);
    }

    #[test]
    fn analytic_single_step_direction() {
        // Width-one model: d loss / dx = (p - y) * w2 * (1 - h^2) * s * w1.
        let m = linear_model();
        let x = img();
        let a: f64 = 0.5 * (0.5 * 0.2 - 1.0 * 0.4 + 2.0 * 0.95) + 0.1;
        let p = 1.0 / (1.0 + (-(1.5 * a.tanh() - 0.2)).exp());
        let y = 1.0;
        let w_eff = [0.5, -1.0, 2.0, 0.0].map(|w| 1.5 * (1.0 - a.tanh().powi(2)) * 0.5 * w);
        let spec = AttackSpec {
            epsilon: 0.03,
            alpha: 0.01,
            iterations: 1,
            random_start: false,
        };
        let out = pgd_attack(&m, &x, 1, &spec, 0).unwrap();
        for i in 0..4 {
            let step = 0.01 * sign((p - y) * w_eff[i]);
            let expected = (x.pixels()[i] + step).clamp(0.0, 1.0);
            assert!((out.pixels()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn stays_in_ball_and_is_deterministic() {
        let m = linear_model();
        let spec = AttackSpec {
            epsilon: 0.05,
            ..AttackSpec::default()
        };
        let a = pgd_attack(&m, &img(), 1, &spec, 77).unwrap();
        let b = pgd_attack(&m, &img(), 1, &spec, 77).unwrap();
        assert_eq!(a, b);
        for (&o, &v) in img().pixels().iter().zip(a.pixels()) {
            assert!((v - o).abs() <= 0.05 + 1e-12 && (0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn rejects_invalid_spec_and_size() {
        let m = linear_model();
        let bad = AttackSpec {
            alpha: 0.0,
            ..AttackSpec::default()
        };
        assert!(matches!(
            pgd_attack(&m, &img(), 0, &bad, 0),
            Err(Error::Config(_))
        ));
        let small = GrayImage::new(1, 1, vec![0.5]).unwrap();
        assert!(matches!(
            pgd_attack(&m, &small, 0, &AttackSpec::default(), 0),
            Err(Error::Dimension(_))
        ));
    }
}
