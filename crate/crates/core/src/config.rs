//! Run configuration: one TOML file, strict keys, every stage seed derived
//! from the master seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackSpec, VictimSpec};
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::evaluation::{CvSpec, ModelParams};
use crate::features::{EmbeddingParams, Family, FeatureParams, SsimParams};
use crate::imaging::{CorpusSpec, Variant};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub victim: VictimSpec,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let a = AttackSpec::default();
        AttackConfig {
            epsilon: a.epsilon,
            alpha: a.alpha,
            iterations: a.iterations,
            random_start: a.random_start,
            victim: VictimSpec::default(),
        }
    }
}

impl AttackConfig {
    pub fn spec(&self) -> AttackSpec {
        AttackSpec {
            epsilon: self.epsilon,
            alpha: self.alpha,
            iterations: self.iterations,
            random_start: self.random_start,
        }
    }
}

/// Histograms have no tunable parameters; the section exists so that a
/// misspelt key is still rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub ssim: SsimParams,
    pub histogram: HistogramConfig,
    pub embedding: EmbeddingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub pooled: bool,
    pub families: Vec<String>,
    pub variants: Vec<String>,
    /// Detectors for the cross-validated table; DBSCAN always runs separately.
    pub models: Vec<String>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            pooled: false,
            families: Family::ALL.iter().map(|f| f.as_str().to_string()).collect(),
            variants: Variant::ALL
                .iter()
                .map(|v| v.as_str().to_string())
                .collect(),
            models: ["gbdt", "kmeans", "logreg"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub family: String,
    pub variant: String,
    pub model: String,
    /// Decision threshold on the oriented detector score; derived from
    /// training data when absent.
    pub threshold: Option<f64>,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            family: "ssim".into(),
            variant: "original".into(),
            model: "kmeans".into(),
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub attack: AttackConfig,
    pub features: FeaturesConfig,
    pub models: ModelParams,
    pub cv: CvConfig,
    pub gate: GateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            corpus: CorpusSpec::default(),
            attack: AttackConfig::default(),
            features: FeaturesConfig::default(),
            models: ModelParams::default(),
            cv: CvConfig::default(),
            gate: GateConfig::default(),
        }
    }
}

fn unique<T: PartialEq + Copy>(
    items: Vec<T>,
    what: &str,
    show: impl Fn(T) -> &'static str,
) -> Result<Vec<T>> {
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(Error::Config(format!("duplicate {what} `{}`", show(*a))));
        }
    }
    Ok(items)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.corpus.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Replaces the master seed (and the corpus seed it governs).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.corpus.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.seed != self.seed {
            return Err(Error::Config(
                "corpus seed must equal the master seed".into(),
            ));
        }
        self.corpus.validate()?;
        self.attack.spec().validate()?;
        self.features.ssim.validate()?;
        if self.features.embedding.dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        self.families()?;
        self.variants()?;
        self.models_list()?;
        self.gate_target()?;
        if self.cv.folds < 2 {
            return Err(Error::Config(format!("cv.folds = {} < 2", self.cv.folds)));
        }
        if self.models.dbscan.eps <= 0.0 || self.models.dbscan.min_pts == 0 {
            return Err(Error::Config(
                "dbscan needs eps > 0 and min_pts >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn families(&self) -> Result<Vec<Family>> {
        let v = self
            .cv
            .families
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<Family>>>()?;
        unique(v, "family", Family::as_str)
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        let v = self
            .cv
            .variants
            .iter()
            .map(|s| s.parse().map_err(Error::Config))
            .collect::<Result<Vec<Variant>>>()?;
        unique(v, "variant", Variant::as_str)
    }

    pub fn models_list(&self) -> Result<Vec<DetectorKind>> {
        let v = self
            .cv
            .models
            .iter()
            .map(|s| DetectorKind::parse(s))
            .collect::<Result<Vec<_>>>()?;
        if v.contains(&DetectorKind::Dbscan) {
            return Err(Error::Config(
                "dbscan runs in the clustering table, not in cv.models".into(),
            ));
        }
        unique(v, "model", DetectorKind::as_str)
    }

    pub fn gate_target(&self) -> Result<(Family, Variant, DetectorKind)> {
        let kind = DetectorKind::parse(&self.gate.model)?;
        if kind == DetectorKind::Dbscan {
            return Err(Error::Config(
                "gate.model = dbscan: DBSCAN has no out-of-sample scores".into(),
            ));
        }
        Ok((
            self.gate.family.parse()?,
            self.gate.variant.parse().map_err(Error::Config)?,
            kind,
        ))
    }

    pub fn cv_spec(&self) -> CvSpec {
        CvSpec {
            folds: self.cv.folds,
            pooled: self.cv.pooled,
        }
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            ssim: self.features.ssim,
            embedding: self.features.embedding.clone(),
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seeds::derive(self.seed, stage)
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "sed = 3",
            "[corpus]\ncont = 10",
            "[attack]\nepsilon = 0.03\nepsilom = 1",
            "[attack.victim]\nhiden = 3",
            "[features.histogram]\nbins = 128",
            "[models.gbdt]\ndepht = 3",
            "[gate]\nthreshhold = 0.1",
            "[evaluation]\n",
        ] {
            assert!(
                matches!(RunConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn duplicate_variant_rejected() {
        let text = "[cv]\nvariants = [\"original\", \"cropped_v1\", \"original\"]";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("duplicate variant"), "{err}");
    }

    #[test]
    fn seed_changes_hash_and_stage_seeds() {
        let a = RunConfig::default();
        let b = RunConfig::default().with_seed(7);
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.stage_seed("attack"), b.stage_seed("attack"));
        assert_ne!(a.stage_seed("attack"), a.stage_seed("evaluate"));
        assert_eq!(b.corpus.seed, 7);
    }

    #[test]
    fn dbscan_gate_rejected() {
        assert!(RunConfig::from_toml("[gate]\nmodel = \"dbscan\"").is_err());
    }
}
