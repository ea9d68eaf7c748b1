use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{
    save_manifest, save_visual_classes, CorpusManifest, Label, ManifestEntry, Variant,
};
use super::{save_png, CropBox, GrayImage};
use crate::error::{Error, Result};
use crate::seeds;

/// Second-layer ground truth: whether the inspected part shows a defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VisualClass {
    Ok,
    Defect,
}

impl VisualClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VisualClass::Ok => "ok",
            VisualClass::Defect => "defect",
        }
    }

    pub fn as_target(self) -> u8 {
        match self {
            VisualClass::Ok => 0,
            VisualClass::Defect => 1,
        }
    }

    pub fn from_target(t: u8) -> Self {
        if t == 0 {
            VisualClass::Ok
        } else {
            VisualClass::Defect
        }
    }
}

impl FromStr for VisualClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ok" => Ok(VisualClass::Ok),
            "defect" => Ok(VisualClass::Defect),
            other => Err(format!("unknown visual class `{other}`")),
        }
    }
}

impl fmt::Display for VisualClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Fraction of images designated as attack targets.
    pub balance: f64,
    /// Set from the master seed, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
    /// Standard deviation of per-pixel sensor noise.
    pub noise: f64,
    /// Depth of the soft dark blob marking a defective part.
    pub motif_amplitude: f64,
    /// Gaussian radius of the defect blob in pixels.
    pub motif_radius: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            count: 600,
            width: 400,
            height: 369,
            balance: 0.5,
            seed: 42,
            noise: 0.001,
            motif_amplitude: 0.05,
            motif_radius: 12.0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Config(format!("corpus count {} < 2", self.count)));
        }
        if !(self.balance > 0.0 && self.balance < 1.0) {
            return Err(Error::Config(format!(
                "corpus balance {} outside (0, 1)",
                self.balance
            )));
        }
        for b in [CropBox::V1, CropBox::V2] {
            if !b.fits(self.width, self.height) {
                return Err(Error::Config(format!(
                    "{}x{} images cannot hold crop box ({}, {}, {}, {})",
                    self.width, self.height, b.left, b.upper, b.right, b.lower
                )));
            }
        }
        if !(self.noise >= 0.0 && self.motif_amplitude >= 0.0 && self.motif_radius > 0.0) {
            return Err(Error::Config(
                "corpus noise/motif parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Number of attack targets, at least one per class.
    pub fn attacked_count(&self) -> usize {
        ((self.balance * self.count as f64).round() as usize).clamp(1, self.count - 1)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub id: String,
    pub image: GrayImage,
    pub label: Label,
    pub class: VisualClass,
}

struct Layout {
    label: Label,
    class: VisualClass,
}

fn layout(spec: &CorpusSpec) -> Vec<Layout> {
    let mut order: Vec<usize> = (0..spec.count).collect();
    order.shuffle(&mut seeds::rng(seeds::derive(spec.seed, "corpus/layout")));
    let n_attacked = spec.attacked_count();
    let mut out: Vec<Option<Layout>> = (0..spec.count).map(|_| None).collect();
    for (rank, &i) in order.iter().enumerate() {
        // Attack targets are defective parts the attacker wants accepted; the
        // clean remainder alternates between the two visual classes.
        let (label, class) = if rank < n_attacked {
            (Label::Attacked, VisualClass::Defect)
        } else if (rank - n_attacked).is_multiple_of(2) {
            (Label::Clean, VisualClass::Ok)
        } else {
            (Label::Clean, VisualClass::Defect)
        };
        out[i] = Some(Layout { label, class });
    }
    out.into_iter()
        .map(|l| l.expect("every slot filled"))
        .collect()
}

fn render(spec: &CorpusSpec, index: usize, class: VisualClass) -> GrayImage {
    let mut rng = seeds::rng(seeds::derive_index(
        seeds::derive(spec.seed, "corpus/image"),
        index as u64,
    ));
    let (w, h) = (spec.width as f64, spec.height as f64);
    let phase_x: f64 = rng.random_range(-3.0..3.0);
    let phase_y: f64 = rng.random_range(-3.0..3.0);
    let (cx, cy) = (
        rng.random_range(0.3 * w..0.7 * w),
        rng.random_range(0.2 * h..0.8 * h),
    );
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let ridge = 0.45 * w;
    let two_r2 = 2.0 * spec.motif_radius * spec.motif_radius;
    GrayImage::from_fn(spec.width, spec.height, |x, y| {
        let (xf, yf) = (x as f64 + phase_x, y as f64 + phase_y);
        let mut v = 0.84
            + 0.03 * (2.0 * PI * xf / 160.0).sin() * (2.0 * PI * yf / 140.0).cos()
            + 0.02 * (-((xf - ridge) / 30.0).powi(2)).exp()
            + 0.01 * (y as f64 / h);
        if class == VisualClass::Defect {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            v -= spec.motif_amplitude * (-(dx * dx + dy * dy) / two_r2).exp();
        }
        if spec.noise > 0.0 {
            v += noise.sample(&mut rng);
        }
        v.clamp(0.0, 1.0)
    })
    .expect("rendered intensities are clamped")
}

/// Renders the corpus in memory. Pixels are not quantized.
pub fn synthesize(spec: &CorpusSpec) -> Result<Vec<SyntheticImage>> {
    spec.validate()?;
    let digits = (spec.count.max(2) - 1).to_string().len().max(4);
    Ok(layout(spec)
        .into_par_iter()
        .enumerate()
        .map(|(i, l)| SyntheticImage {
            id: format!("img_{i:0digits$}"),
            image: render(spec, i, l.class),
            label: l.label,
            class: l.class,
        })
        .collect())
}

pub const CLASSES_FILE: &str = "classes.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `images/*.png`, `manifest.csv` and `classes.csv` under `dir`.
///
/// Entries labelled `attacked` are the designated attack targets; their
/// pixels are untouched until the attack stage rewrites them.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<CorpusManifest> {
    let images = synthesize(spec)?;
    images
        .par_iter()
        .map(|s| save_png(&s.image, &dir.join("images").join(format!("{}.png", s.id))))
        .collect::<Result<Vec<()>>>()?;
    let manifest = CorpusManifest {
        root: dir.to_path_buf(),
        seed: spec.seed,
        entries: images
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                path: PathBuf::from(format!("images/{}.png", s.id)),
                label: s.label,
                variant: Variant::Original,
            })
            .collect(),
    };
    save_manifest(&manifest, &dir.join(MANIFEST_FILE))?;
    let classes: BTreeMap<String, VisualClass> =
        images.iter().map(|s| (s.id.clone(), s.class)).collect();
    save_visual_classes(&classes, &dir.join(CLASSES_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            count,
            seed,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn class_balance() {
        let spec = CorpusSpec {
            count: 1194,
            ..CorpusSpec::default()
        };
        let l = layout(&spec);
        let attacked = l.iter().filter(|x| x.label == Label::Attacked).count();
        assert_eq!(attacked, 597);
        assert_eq!(l.len() - attacked, 597);
    }

    #[test]
    fn too_narrow_for_crop_boxes() {
        let spec = CorpusSpec {
            width: 100,
            ..small(20, 7)
        };
        assert!(matches!(synthesize(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_balance_and_count() {
        assert!(synthesize(&CorpusSpec {
            balance: 1.0,
            ..small(20, 7)
        })
        .is_err());
        assert!(synthesize(&small(1, 7)).is_err());
    }

    #[test]
    fn byte_identical_runs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            width: 220,
            height: 380,
            ..small(20, 7)
        };
        generate_corpus(&spec, a.path()).unwrap();
        generate_corpus(&spec, b.path()).unwrap();
        for name in [
            "manifest.csv",
            "classes.csv",
            "images/img_0000.png",
            "images/img_0019.png",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn defect_motif_darkens() {
        let spec = CorpusSpec {
            noise: 0.0,
            ..small(8, 3)
        };
        let imgs = synthesize(&spec).unwrap();
        let mean = |c: VisualClass| {
            let v: Vec<f64> = imgs
                .iter()
                .filter(|s| s.class == c)
                .map(|s| s.image.pixels().iter().sum::<f64>() / s.image.len() as f64)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(VisualClass::Defect) < mean(VisualClass::Ok));
        assert!(imgs
            .iter()
            .all(|s| s.image.pixels().iter().all(|&p| (0.7..0.95).contains(&p))));
    }
}
