//! Two-layer runtime: a first-layer detector screens each incoming frame and
//! only frames judged clean reach the second-layer classifier.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::attack::VictimModel;
use crate::detectors::{ByteReader, ByteWriter, DetectorKind, DetectorModel, Matrix};
use crate::error::{Error, Result};
use crate::evaluation::{fit_detector, select_top_k, ModelParams};
use crate::features::{extract, Family, FeatureMatrix, FeatureParams, SsimParams};
use crate::imaging::{crop, load_png, CorpusManifest, GrayImage, Variant, VisualClass};

/// The classifier protected by the gate.
pub trait SecondLayer: Sync {
    fn classify(&self, img: &GrayImage) -> Result<VisualClass>;
}

impl SecondLayer for VictimModel {
    fn classify(&self, img: &GrayImage) -> Result<VisualClass> {
        Ok(VisualClass::from_target(VictimModel::classify(self, img)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Tampered,
    Clean,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Tampered => "tampered",
            Decision::Clean => "clean",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GateTimings {
    pub features: Duration,
    pub detector: Duration,
    pub second_layer: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateVerdict {
    pub decision: Decision,
    pub score: f64,
    /// Present exactly when the decision is clean.
    pub second_layer_label: Option<VisualClass>,
    pub timings: GateTimings,
}

/// A detector bundled with everything needed to score a raw frame: the
/// feature family and crop it was trained on, the selected columns, the
/// score orientation and the decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDetector {
    pub family: Family,
    pub variant: Variant,
    /// Full-frame geometry the gate accepts.
    pub width: usize,
    pub height: usize,
    pub ssim: SsimParams,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub columns: Vec<usize>,
    pub model: DetectorModel,
    pub orientation: f64,
    pub threshold: f64,
}

impl GateDetector {
    /// Fits on every row of `features`, which must come from frames of size
    /// `width x height` cropped to `variant`. Without an explicit threshold the
    /// midpoint between the mean training scores of the two KMeans clusters
    /// (or of the two classes, for supervised models) is used.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        features: &FeatureMatrix,
        labels: &[u8],
        variant: Variant,
        (width, height): (usize, usize),
        kind: DetectorKind,
        models: &ModelParams,
        params: &FeatureParams,
        threshold: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        let x = features.to_matrix();
        let columns = select_top_k(&x, labels)?;
        let x = x.select_columns(&columns)?;
        let fitted = fit_detector(kind, models, &x, labels, seed)?;
        let groups: Vec<usize> = match &fitted.model {
            DetectorModel::KMeans(m) => m.assign(&x)?.cluster,
            _ => labels.iter().map(|&l| l as usize).collect(),
        };
        let mean_of = |g: usize| {
            let v: Vec<f64> = fitted
                .train_scores
                .iter()
                .zip(&groups)
                .filter(|(_, &c)| c == g)
                .map(|(s, _)| *s)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let threshold = threshold.unwrap_or_else(|| 0.5 * (mean_of(0) + mean_of(1)));
        if !threshold.is_finite() {
            return Err(Error::Config(format!(
                "gate threshold {threshold} is not finite"
            )));
        }
        Ok(GateDetector {
            family: features.family,
            variant,
            width,
            height,
            ssim: params.ssim,
            embedding_dim: params.embedding.dim,
            embedding_seed: params.embedding.seed,
            columns,
            model: fitted.model,
            orientation: fitted.orientation,
            threshold,
        })
    }

    fn feature_params(&self) -> FeatureParams {
        let mut p = FeatureParams {
            ssim: self.ssim,
            ..Default::default()
        };
        p.embedding.dim = self.embedding_dim;
        p.embedding.seed = self.embedding_seed;
        p
    }

    /// Crops a full frame to the detector's variant and extracts its row.
    pub fn features(&self, img: &GrayImage) -> Result<Vec<f64>> {
        if (img.width(), img.height()) != (self.width, self.height) {
            return Err(Error::Dimension(format!(
                "gate expects {}x{} frames, got {}x{}",
                self.width,
                self.height,
                img.width(),
                img.height()
            )));
        }
        let view = crop(img, self.variant.crop_box(self.width, self.height))?;
        let fm = extract(
            self.family,
            vec![String::new()],
            &[view],
            &self.feature_params(),
        )?;
        Ok(self.columns.iter().map(|&c| fm.values[c]).collect())
    }

    /// Oriented score; larger means more likely tampered.
    pub fn score(&self, img: &GrayImage) -> Result<f64> {
        let row = self.features(img)?;
        self.score_row(row)
    }

    fn score_row(&self, row: Vec<f64>) -> Result<f64> {
        let x = Matrix::new(1, row.len(), row)?;
        Ok(self.model.score(&x)?[0] * self.orientation)
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "gate: family={} variant={} frame={}x{} columns={} threshold={} orientation={}",
            self.family,
            self.variant,
            self.width,
            self.height,
            self.columns.len(),
            self.threshold,
            self.orientation
        );
        s.push_str(&self.model.describe());
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GATE_MAGIC);
        w.u32(1);
        w.str(self.family.as_str());
        w.str(self.variant.as_str());
        w.u64(self.width as u64);
        w.u64(self.height as u64);
        w.u64(self.ssim.window as u64);
        w.u64(self.ssim.stride as u64);
        w.f64(self.ssim.k1);
        w.f64(self.ssim.k2);
        w.f64(self.ssim.range);
        w.u64(self.embedding_dim as u64);
        w.u64(self.embedding_seed);
        w.u64(self.columns.len() as u64);
        self.columns.iter().for_each(|&c| w.u64(c as u64));
        w.f64(self.orientation);
        w.f64(self.threshold);
        let model = self.model.to_bytes();
        w.u64(model.len() as u64);
        w.bytes(&model);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(GATE_MAGIC.len())? != GATE_MAGIC || r.u32()? != 1 {
            return Err(Error::Format("not a gate detector file".into()));
        }
        let family: Family = r.str()?.parse()?;
        let variant: Variant = r.str()?.parse().map_err(Error::Format)?;
        let width = r.u64()? as usize;
        let height = r.u64()? as usize;
        let ssim = SsimParams {
            window: r.u64()? as usize,
            stride: r.u64()? as usize,
            k1: r.f64()?,
            k2: r.f64()?,
            range: r.f64()?,
        };
        let embedding_dim = r.u64()? as usize;
        let embedding_seed = r.u64()?;
        let n = r.len()?;
        let columns = (0..n)
            .map(|_| r.u64().map(|c| c as usize))
            .collect::<Result<_>>()?;
        let orientation = r.f64()?;
        let threshold = r.f64()?;
        let len = r.len()?;
        let model = DetectorModel::from_bytes(r.take(len)?)?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after gate detector".into()));
        }
        Ok(GateDetector {
            family,
            variant,
            width,
            height,
            ssim,
            embedding_dim,
            embedding_seed,
            columns,
            model,
            orientation,
            threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const GATE_MAGIC: &[u8; 8] = b"TGGATE\0\0";

/// Screens one frame. Tampered frames never reach `second_layer`.
pub fn gate(
    img: &GrayImage,
    detector: &GateDetector,
    second_layer: &dyn SecondLayer,
) -> Result<GateVerdict> {
    if detector.model.kind() == DetectorKind::Dbscan {
        return Err(Error::UnsupportedDetector(
            "DBSCAN labels only its training rows and cannot gate new images".into(),
        ));
    }
    let t0 = Instant::now();
    let row = detector.features(img)?;
    let t1 = Instant::now();
    let score = detector.score_row(row)?;
    let t2 = Instant::now();
    let mut timings = GateTimings {
        features: t1 - t0,
        detector: t2 - t1,
        second_layer: None,
    };
    if score > detector.threshold {
        return Ok(GateVerdict {
            decision: Decision::Tampered,
            score,
            second_layer_label: None,
            timings,
        });
    }
    let label = second_layer.classify(img)?;
    timings.second_layer = Some(t2.elapsed());
    Ok(GateVerdict {
        decision: Decision::Clean,
        score,
        second_layer_label: Some(label),
        timings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictEntry {
    pub id: String,
    pub outcome: std::result::Result<GateVerdict, String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateSummary {
    pub tampered: usize,
    pub clean: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerdictLog {
    pub entries: Vec<VerdictEntry>,
}

pub const VERDICT_HEADER: &str = "id,decision,score,second_layer_label,error";

impl VerdictLog {
    pub fn summary(&self) -> GateSummary {
        let mut s = GateSummary::default();
        for e in &self.entries {
            match &e.outcome {
                Ok(v) if v.decision == Decision::Tampered => s.tampered += 1,
                Ok(_) => s.clean += 1,
                Err(_) => s.errors += 1,
            }
        }
        s
    }

    /// One line per entry in manifest order, then a summary comment.
    pub fn to_text(&self) -> String {
        let mut out = format!("{VERDICT_HEADER}\n");
        for e in &self.entries {
            match &e.outcome {
                Ok(v) => {
                    let label = v.second_layer_label.map_or("", VisualClass::as_str);
                    writeln!(out, "{},{},{},{label},", e.id, v.decision, v.score).unwrap();
                }
                Err(msg) => {
                    let msg = msg.replace([',', '\n'], ";");
                    writeln!(out, "{},error,,,{msg}", e.id).unwrap();
                }
            }
        }
        let s = self.summary();
        writeln!(
            out,
            "# total={} tampered={} clean={} errors={}",
            self.entries.len(),
            s.tampered,
            s.clean,
            s.errors
        )
        .unwrap();
        out
    }
}

/// Gates every manifest entry; failures are recorded per image and the batch
/// carries on.
pub fn batch_gate(
    manifest: &CorpusManifest,
    detector: &GateDetector,
    second_layer: &dyn SecondLayer,
) -> Result<VerdictLog> {
    if detector.model.kind() == DetectorKind::Dbscan {
        return Err(Error::UnsupportedDetector(
            "DBSCAN cannot gate new images".into(),
        ));
    }
    let entries = manifest
        .entries
        .par_iter()
        .map(|e| VerdictEntry {
            id: e.id.clone(),
            outcome: load_png(&manifest.resolve(e))
                .and_then(|img| gate(&img, detector, second_layer))
                .map_err(|err| err.to_string()),
        })
        .collect();
    Ok(VerdictLog { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{dbscan, GbdtParams};
    use crate::imaging::{save_png, Label, ManifestEntry};
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl SecondLayer for Counting {
        fn classify(&self, _: &GrayImage) -> Result<VisualClass> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(VisualClass::Ok)
        }
    }

    const W: usize = 16;
    const H: usize = 16;

    fn frame(i: usize, attacked: bool) -> GrayImage {
        GrayImage::from_fn(W, H, |x, y| {
            let base = 0.8 + 0.01 * ((x + y + i) % 3) as f64;
            if attacked && (x + y) % 2 == 0 {
                base - 0.2
            } else {
                base
            }
        })
        .unwrap()
    }

    fn fitted(kind: DetectorKind) -> (GateDetector, Vec<GrayImage>, Vec<u8>) {
        let images: Vec<GrayImage> = (0..40).map(|i| frame(i, i % 2 == 1)).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let fm = extract(
            Family::Histogram,
            (0..40).map(|i| format!("f{i}")).collect(),
            &images,
            &FeatureParams::default(),
        )
        .unwrap();
        let models = ModelParams {
            gbdt: GbdtParams {
                iterations: 5,
                depth: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let g = GateDetector::fit(
            &fm,
            &labels,
            Variant::Original,
            (W, H),
            kind,
            &models,
            &FeatureParams::default(),
            None,
            7,
        )
        .unwrap();
        (g, images, labels)
    }

    #[test]
    fn short_circuits_tampered_frames() {
        let (g, images, labels) = fitted(DetectorKind::KMeans);
        let counter = Counting(AtomicUsize::new(0));
        let mut clean = 0;
        for (img, &l) in images.iter().zip(&labels) {
            let v = gate(img, &g, &counter).unwrap();
            assert_eq!(
                v.decision == Decision::Clean,
                v.second_layer_label.is_some()
            );
            assert_eq!(
                v.decision,
                if l == 1 {
                    Decision::Tampered
                } else {
                    Decision::Clean
                }
            );
            clean += usize::from(v.decision == Decision::Clean);
        }
        assert_eq!(counter.0.load(Ordering::SeqCst), clean);
        assert_eq!(clean, 20);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (g, images, _) = fitted(DetectorKind::Gbdt);
        let back = GateDetector::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        let c = Counting(AtomicUsize::new(0));
        let a = gate(&images[3], &g, &c).unwrap();
        let b = gate(&images[3], &back, &c).unwrap();
        assert_eq!((a.decision, a.score), (b.decision, b.score));
    }

    #[test]
    fn wrong_geometry_rejected() {
        let (g, _, _) = fitted(DetectorKind::LogReg);
        let img = GrayImage::from_fn(W + 1, H, |_, _| 0.5).unwrap();
        assert!(matches!(
            gate(&img, &g, &Counting(AtomicUsize::new(0))),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dbscan_cannot_gate() {
        let (mut g, images, _) = fitted(DetectorKind::KMeans);
        let x = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        g.model = DetectorModel::Dbscan(dbscan(&x, 0.5, 1).unwrap());
        assert!(matches!(
            gate(&images[0], &g, &Counting(AtomicUsize::new(0))),
            Err(Error::UnsupportedDetector(_))
        ));
    }

    fn manifest(dir: &Path, images: &[GrayImage]) -> CorpusManifest {
        let entries = images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let rel = PathBuf::from(format!("f{i:02}.png"));
                save_png(img, &dir.join(&rel)).unwrap();
                ManifestEntry {
                    id: format!("f{i:02}"),
                    path: rel,
                    label: if i % 2 == 1 {
                        Label::Attacked
                    } else {
                        Label::Clean
                    },
                    variant: Variant::Original,
                }
            })
            .collect();
        CorpusManifest {
            root: dir.to_path_buf(),
            seed: 0,
            entries,
        }
    }

    #[test]
    fn batch_counts_and_corrupt_file() {
        let (g, images, _) = fitted(DetectorKind::KMeans);
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path(), &images[..20]);
        let second = Counting(AtomicUsize::new(0));
        let log = batch_gate(&m, &g, &second).unwrap();
        let s = log.summary();
        assert_eq!(s.tampered + s.clean + s.errors, 20);
        assert_eq!(s.errors, 0);

        fs::write(dir.path().join("f07.png"), b"garbage").unwrap();
        let log = batch_gate(&m, &g, &second).unwrap();
        let s = log.summary();
        assert_eq!((s.tampered + s.clean, s.errors), (19, 1));
        assert!(log.entries[7].outcome.is_err());
        let text = log.to_text();
        assert_eq!(text.lines().count(), 22);
        assert!(text.lines().nth(8).unwrap().starts_with("f07,error,,,"));
    }

    #[test]
    fn empty_manifest() {
        let (g, _, _) = fitted(DetectorKind::KMeans);
        let m = CorpusManifest {
            root: PathBuf::new(),
            seed: 0,
            entries: Vec::new(),
        };
        let log = batch_gate(&m, &g, &Counting(AtomicUsize::new(0))).unwrap();
        assert!(log.entries.is_empty());
        assert_eq!(log.summary(), GateSummary::default());
    }
}
