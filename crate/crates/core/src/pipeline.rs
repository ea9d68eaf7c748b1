//! Stage orchestration: generate, attack, featurize, evaluate, report, gate.
//!
//! Each stage writes its outputs under `<out>/<stage>/` together with a
//! `STAMP` file holding the producing config hash and a content digest.
//! Downstream stages refuse to read a directory whose stamp is missing or
//! was produced under a different config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::attack::{pgd_attack, train_victim, VictimFit, VictimModel};
use crate::config::{AttackConfig, RunConfig};
use crate::detectors::DetectorModel;
use crate::error::{Error, Result};
use crate::evaluation::{
    run_classification_experiment, run_clustering_experiment, ExperimentReport, FeatureSet, Layout,
};
use crate::features::{extract, ingest_embeddings, Family, FeatureMatrix, FeatureParams};
use crate::guard::{batch_gate, GateDetector, VerdictLog};
use crate::imaging::{
    crop, load_manifest, load_png, load_visual_classes, quantize, save_png, save_visual_classes,
    synthesize, CorpusManifest, CorpusSpec, GrayImage, Label, ManifestEntry, Variant, VisualClass,
};
use crate::seeds;

/// One full frame after the attack stage.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub label: Label,
    pub class: VisualClass,
    pub image: GrayImage,
}

/// What an 8-bit PNG round trip would leave of `img`.
pub fn quantized(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        quantize(img.get(x, y)) as f64 / 255.0
    })
    .expect("quantized values lie in [0, 1]")
}

/// Renders the corpus as it would be read back from disk.
pub fn generate_frames(spec: &CorpusSpec) -> Result<Vec<Frame>> {
    Ok(synthesize(spec)?
        .into_par_iter()
        .map(|s| Frame {
            id: s.id,
            label: s.label,
            class: s.class,
            image: quantized(&s.image),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub victim: VictimFit,
    /// Victim loss on each attacked frame before and after PGD.
    pub losses: Vec<(String, f64, f64)>,
}

impl AttackOutcome {
    /// Fraction of attacked frames whose victim decision flipped.
    pub fn success_rate(&self, frames_before: &[Frame], frames_after: &[Frame]) -> Result<f64> {
        let mut flipped = 0;
        let mut total = 0;
        for (a, b) in frames_before.iter().zip(frames_after) {
            if a.label == Label::Attacked {
                total += 1;
                let before = self.victim.model.classify(&a.image)?;
                let after = self.victim.model.classify(&b.image)?;
                flipped += usize::from(before != after);
            }
        }
        Ok(flipped as f64 / total.max(1) as f64)
    }
}

/// Trains the victim on a class-balanced subset of clean frames, then replaces
/// every attack-designated frame with its PGD counterpart (quantized to 8 bits).
pub fn train_and_attack(
    frames: &mut [Frame],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    let spec = cfg.spec();
    spec.validate()?;
    let per_class = cfg.victim.train_size / 2;
    let mut chosen = Vec::new();
    for class in [VisualClass::Ok, VisualClass::Defect] {
        chosen.extend(
            frames
                .iter()
                .filter(|f| f.label == Label::Clean && f.class == class)
                .take(per_class),
        );
    }
    let images: Vec<GrayImage> = chosen.iter().map(|f| f.image.clone()).collect();
    let labels: Vec<u8> = chosen.iter().map(|f| f.class.as_target()).collect();
    let victim = train_victim(&images, &labels, &cfg.victim, seeds::derive(seed, "victim"))?;
    let attack_seed = seeds::derive(seed, "pgd");
    let model = &victim.model;
    let losses = frames
        .par_iter_mut()
        .enumerate()
        .filter(|(_, f)| f.label == Label::Attacked)
        .map(|(i, f)| {
            let target = f.class.as_target();
            let before = model.loss(&f.image, target)?;
            let adv = pgd_attack(
                model,
                &f.image,
                target,
                &spec,
                seeds::derive_index(attack_seed, i as u64),
            )?;
            f.image = quantized(&adv);
            Ok((f.id.clone(), before, model.loss(&f.image, target)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttackOutcome { victim, losses })
}

/// Extracts every requested (family x variant) matrix from full frames.
pub fn feature_sets(
    frames: &[Frame],
    families: &[Family],
    variants: &[Variant],
    params: &FeatureParams,
) -> Result<Vec<FeatureSet>> {
    let labels: Vec<u8> = frames.iter().map(|f| f.label.as_target()).collect();
    let mut out = Vec::new();
    for &variant in variants {
        let views: Vec<GrayImage> = frames
            .par_iter()
            .map(|f| {
                crop(
                    &f.image,
                    variant.crop_box(f.image.width(), f.image.height()),
                )
            })
            .collect::<Result<_>>()?;
        let ids: Vec<String> = frames
            .iter()
            .map(|f| format!("{}{}", f.id, variant.id_suffix()))
            .collect();
        for &family in families {
            out.push(FeatureSet {
                variant,
                features: extract(family, ids.clone(), &views, params)?,
                labels: labels.clone(),
            });
        }
    }
    Ok(out)
}

/// Runs both experiment tables in memory.
pub fn evaluate_sets(cfg: &RunConfig, sets: &[FeatureSet]) -> Result<ExperimentReport> {
    let seed = cfg.stage_seed("evaluate");
    let table1 = run_classification_experiment(
        sets,
        &cfg.models_list()?,
        &cfg.models,
        &cfg.cv_spec(),
        seed,
    )?;
    let table2 = run_clustering_experiment(sets, &cfg.models.dbscan)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("seed".into(), cfg.seed.to_string());
    metadata.insert("config_hash".into(), cfg.hash());
    metadata.insert(
        "corpus".into(),
        format!(
            "count={} size={}x{} balance={} noise={} motif_amplitude={} motif_radius={}",
            cfg.corpus.count,
            cfg.corpus.width,
            cfg.corpus.height,
            cfg.corpus.balance,
            cfg.corpus.noise,
            cfg.corpus.motif_amplitude,
            cfg.corpus.motif_radius
        ),
    );
    let a = &cfg.attack;
    metadata.insert(
        "attack".into(),
        format!(
            "pgd epsilon={} alpha={} iterations={} random_start={} victim_hidden={} victim_train_size={}",
            a.epsilon, a.alpha, a.iterations, a.random_start, a.victim.hidden, a.victim.train_size
        ),
    );
    metadata.insert(
        "cv".into(),
        format!(
            "folds={} aggregation={}",
            cfg.cv.folds,
            if cfg.cv.pooled { "pooled" } else { "fold_mean" }
        ),
    );
    metadata.insert(
        "dbscan".into(),
        format!(
            "eps={} min_pts={}",
            cfg.models.dbscan.eps, cfg.models.dbscan.min_pts
        ),
    );
    Ok(ExperimentReport {
        table1,
        table2,
        metadata,
    })
}

// ---- on-disk stages ----

pub const STAMP: &str = "STAMP";

pub struct Workspace {
    pub out: PathBuf,
    pub config: RunConfig,
    hash: String,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// SHA-256 over the relative paths and bytes of every file under `dir`
/// except the stamp, in sorted order.
pub fn content_digest(dir: &Path) -> Result<String> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, base, out)?;
            } else if p.file_name().is_some_and(|n| n != STAMP) {
                out.push(p.strip_prefix(base).expect("under base").to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel)).map_err(|e| Error::io(dir.join(&rel), e))?;
        h.update(rel.to_string_lossy().replace('\\', "/").as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Workspace {
            out: out.into(),
            config,
            hash,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn stamp(&self, stage: &str) -> Result<String> {
        let dir = self.dir(stage);
        let digest = content_digest(&dir)?;
        write(
            &dir.join(STAMP),
            format!("stage={stage}\nconfig={}\ncontent={digest}\n", self.hash),
        )?;
        Ok(digest)
    }

    /// Fails unless `stage` completed under the current config.
    pub fn require(&self, stage: &'static str) -> Result<PathBuf> {
        let dir = self.dir(stage);
        let stamp = dir.join(STAMP);
        if !stamp.is_file() {
            return Err(Error::MissingArtifact { path: stamp, stage });
        }
        let text = read_text(&stamp)?;
        let found = text
            .lines()
            .find_map(|l| l.strip_prefix("config="))
            .unwrap_or("")
            .to_string();
        if found != self.hash {
            return Err(Error::StaleArtifact {
                path: stamp,
                found,
                expected: self.hash.clone(),
            });
        }
        Ok(dir)
    }

    fn reset(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn manifest_text(&self, m: &CorpusManifest) -> String {
        format!("# config={}\n{}", self.hash, m.to_text())
    }

    /// Synthetic corpus under `corpus/`.
    pub fn generate(&self) -> Result<String> {
        let dir = self.reset("generate")?;
        let frames = generate_frames(&self.config.corpus)?;
        frames
            .par_iter()
            .map(|f| save_png(&f.image, &dir.join(format!("images/{}.png", f.id))))
            .collect::<Result<Vec<()>>>()?;
        let manifest = CorpusManifest {
            root: dir.clone(),
            seed: self.config.seed,
            entries: frames
                .iter()
                .map(|f| ManifestEntry {
                    id: f.id.clone(),
                    path: PathBuf::from(format!("images/{}.png", f.id)),
                    label: f.label,
                    variant: Variant::Original,
                })
                .collect(),
        };
        write(&dir.join("manifest.csv"), self.manifest_text(&manifest))?;
        let classes = frames.iter().map(|f| (f.id.clone(), f.class)).collect();
        save_visual_classes(&classes, &dir.join("classes.csv"))?;
        self.stamp("generate")
    }

    fn load_frames(&self, dir: &Path) -> Result<Vec<Frame>> {
        let manifest = load_manifest(&dir.join("manifest.csv"))?;
        let classes = load_visual_classes(&dir.join("classes.csv"))?;
        manifest
            .entries
            .par_iter()
            .filter(|e| e.variant == Variant::Original)
            .map(|e| {
                Ok(Frame {
                    id: e.id.clone(),
                    label: e.label,
                    class: *classes.get(&e.id).ok_or_else(|| {
                        Error::Resolution(format!("no visual class for `{}`", e.id))
                    })?,
                    image: load_png(&manifest.resolve(e))?,
                })
            })
            .collect()
    }

    /// Victim training and PGD; writes all three crop variants.
    pub fn attack(&self) -> Result<String> {
        let src = self.require("generate")?;
        let mut frames = self.load_frames(&src)?;
        let outcome = train_and_attack(
            &mut frames,
            &self.config.attack,
            self.config.stage_seed("attack"),
        )?;
        let dir = self.reset("attack")?;
        outcome.victim.model.save(&dir.join("victim.bin"))?;

        let mut entries = Vec::new();
        let mut classes = BTreeMap::new();
        for variant in Variant::ALL {
            for f in &frames {
                let id = format!("{}{}", f.id, variant.id_suffix());
                let rel = PathBuf::from(format!("images/{id}.png"));
                entries.push((f, id, rel, variant));
            }
        }
        entries
            .par_iter()
            .map(|(f, _, rel, variant)| {
                let b = variant.crop_box(f.image.width(), f.image.height());
                save_png(&crop(&f.image, b)?, &dir.join(rel))
            })
            .collect::<Result<Vec<()>>>()?;
        let manifest = CorpusManifest {
            root: dir.clone(),
            seed: self.config.seed,
            entries: entries
                .iter()
                .map(|(f, id, rel, variant)| {
                    classes.insert(id.clone(), f.class);
                    ManifestEntry {
                        id: id.clone(),
                        path: rel.clone(),
                        label: f.label,
                        variant: *variant,
                    }
                })
                .collect(),
        };
        write(&dir.join("manifest.csv"), self.manifest_text(&manifest))?;
        save_visual_classes(&classes, &dir.join("classes.csv"))?;

        let mut summary = String::from("id,loss_before,loss_after\n");
        for (id, a, b) in &outcome.losses {
            writeln!(summary, "{id},{a},{b}").unwrap();
        }
        write(&dir.join("losses.csv"), summary)?;
        let train_loss = outcome.victim.losses.last().copied().unwrap_or(f64::NAN);
        write(
            &dir.join("victim.txt"),
            format!(
                "hidden={}\ntrain_size={}\nfinal_train_loss={train_loss}\n",
                outcome.victim.model.hidden(),
                self.config.attack.victim.train_size
            ),
        )?;
        self.stamp("attack")
    }

    fn features_path(&self, family: Family, variant: Variant) -> PathBuf {
        self.dir("featurize")
            .join(format!("{family}_{variant}.csv"))
    }

    /// One feature file per configured (family x variant).
    pub fn featurize(&self) -> Result<String> {
        let src = self.require("attack")?;
        let manifest = load_manifest(&src.join("manifest.csv"))?;
        self.reset("featurize")?;
        let params = self.config.feature_params();
        let meta = format!("config={}", self.hash);
        for variant in self.config.variants()? {
            let sub = manifest.filter_variant(variant);
            let images: Vec<GrayImage> = sub
                .entries
                .par_iter()
                .map(|e| load_png(&sub.resolve(e)))
                .collect::<Result<_>>()?;
            let ids: Vec<String> = sub.entries.iter().map(|e| e.id.clone()).collect();
            for family in self.config.families()? {
                let external = params.embedding.files.get(variant.as_str());
                let fm = match (family, external) {
                    (Family::Embeddings, Some(path)) => ingest_embeddings(path, &sub)?,
                    _ => extract(family, ids.clone(), &images, &params)?,
                };
                fm.save(&self.features_path(family, variant), &meta)?;
            }
        }
        self.stamp("featurize")
    }

    fn load_sets(&self) -> Result<Vec<FeatureSet>> {
        self.require("featurize")?;
        let manifest = load_manifest(&self.dir("attack").join("manifest.csv"))?;
        let mut sets = Vec::new();
        for variant in self.config.variants()? {
            let sub = manifest.filter_variant(variant);
            for family in self.config.families()? {
                let path = self.features_path(family, variant);
                let (fm, meta) = FeatureMatrix::load(&path)?;
                self.check_meta(&path, &meta)?;
                if fm.ids.iter().ne(sub.entries.iter().map(|e| &e.id)) {
                    return Err(Error::Invariant(format!(
                        "{} rows do not follow the manifest",
                        path.display()
                    )));
                }
                sets.push(FeatureSet {
                    variant,
                    features: fm,
                    labels: sub.labels(),
                });
            }
        }
        Ok(sets)
    }

    fn check_meta(
        &self,
        path: &Path,
        meta: &std::collections::HashMap<String, String>,
    ) -> Result<()> {
        let found = meta.get("config").cloned().unwrap_or_default();
        if found != self.hash {
            return Err(Error::StaleArtifact {
                path: path.to_path_buf(),
                found,
                expected: self.hash.clone(),
            });
        }
        Ok(())
    }

    /// Both experiment tables, full precision.
    pub fn evaluate(&self) -> Result<String> {
        let sets = self.load_sets()?;
        let mut report = evaluate_sets(&self.config, &sets)?;
        let attack = self.require("attack")?;
        report
            .metadata
            .insert("attack_digest".into(), content_digest(&attack)?);
        let dir = self.reset("evaluate")?;
        write(
            &dir.join("results.csv"),
            format!("# config={}\n{}", self.hash, report.to_results_text()),
        )?;
        write_tables(&dir, &report, Layout::Full)?;
        self.stamp("evaluate")
    }

    pub fn load_report(&self) -> Result<ExperimentReport> {
        let dir = self.require("evaluate")?;
        let text = read_text(&dir.join("results.csv"))?;
        let found = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# config="))
            .unwrap_or("");
        if found != self.hash {
            return Err(Error::StaleArtifact {
                path: dir.join("results.csv"),
                found: found.to_string(),
                expected: self.hash.clone(),
            });
        }
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        ExperimentReport::from_results_text(&body)
    }

    /// Renders the tables from evaluation results.
    pub fn report(&self, paper_layout: bool) -> Result<String> {
        let report = self.load_report()?;
        let dir = self.reset("report")?;
        let layout = if paper_layout {
            Layout::Paper
        } else {
            Layout::Full
        };
        write_tables(&dir, &report, layout)?;
        self.stamp("report")
    }

    /// Fits the configured gate detector on all rows of its feature file and
    /// screens `manifest` (default: the attacked corpus, original frames).
    pub fn gate(&self, manifest: Option<&Path>) -> Result<(GateDetector, VerdictLog)> {
        let (family, variant, kind) = self.config.gate_target()?;
        self.require("featurize")?;
        let attack = self.require("attack")?;
        let path = self.features_path(family, variant);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "gate uses {family}/{variant}, which the featurize stage did not produce"
            )));
        }
        let (fm, meta) = FeatureMatrix::load(&path)?;
        self.check_meta(&path, &meta)?;
        let all = load_manifest(&attack.join("manifest.csv"))?;
        let labels = all.filter_variant(variant).labels();
        let c = &self.config.corpus;
        let detector = GateDetector::fit(
            &fm,
            &labels,
            variant,
            (c.width, c.height),
            kind,
            &self.config.models,
            &self.config.feature_params(),
            self.config.gate.threshold,
            self.config.stage_seed("gate"),
        )?;
        let victim = VictimModel::load(&attack.join("victim.bin"))?;
        let targets = match manifest {
            Some(p) => load_manifest(p)?,
            None => all.filter_variant(Variant::Original),
        };
        let log = batch_gate(&targets, &detector, &victim)?;
        let dir = self.reset("gate")?;
        detector.save(&dir.join("detector.bin"))?;
        write(&dir.join("verdicts.csv"), log.to_text())?;
        self.stamp("gate")?;
        Ok((detector, log))
    }

    /// Every stage in order.
    pub fn run_all(&self, paper_layout: bool) -> Result<String> {
        self.generate()?;
        self.attack()?;
        self.featurize()?;
        self.evaluate()?;
        let digest = self.report(paper_layout)?;
        self.gate(None)?;
        Ok(digest)
    }
}

fn write_tables(dir: &Path, report: &ExperimentReport, layout: Layout) -> Result<()> {
    write(&dir.join("table1.csv"), report.table1_csv(layout))?;
    write(&dir.join("table2.csv"), report.table2_csv(layout))?;
    write(&dir.join("metadata.txt"), report.metadata_text())
}

/// Human-readable summary of any model file the pipeline writes.
pub fn describe(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"TGGATE") {
        Ok(GateDetector::from_bytes(&bytes)?.describe())
    } else if bytes.starts_with(b"TGDETECT") {
        Ok(DetectorModel::from_bytes(&bytes)?.describe())
    } else if bytes.starts_with(b"TGVICTIM") {
        let v = VictimModel::from_bytes(&bytes)?;
        Ok(format!(
            "victim: inputs={} hidden={} seed={}\n",
            v.input_len(),
            v.hidden(),
            v.seed()
        ))
    } else {
        Err(Error::Format(format!(
            "{}: not a model file",
            path.display()
        )))
    }
}
