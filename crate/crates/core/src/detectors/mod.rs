//! First-layer detectors: KMeans, DBSCAN, logistic regression and focal-loss
//! gradient boosting, with the scaling each one is paired with.

mod dbscan;
mod focal;
mod gbdt;
mod kmeans;
mod logreg;
mod matrix;
mod scaler;

pub use dbscan::{dbscan, DbscanModel, DbscanParams, NOISE};
pub use focal::{focal_loss, FocalTerms};
pub use gbdt::{gbdt_fit, gbdt_score, GbdtFit, GbdtModel, GbdtParams, Node, Tree};
pub use kmeans::{kmeans_assign, kmeans_fit, kmeans_fit_best, Assignment, KMeansFit, KMeansModel};
pub use logreg::{logreg_fit, logreg_score, LogRegModel, LogRegParams};
pub use matrix::Matrix;
pub use scaler::{apply_scaler, fit_scaler, minmax_only, ScalerMode, ScalerParams};

pub(crate) use matrix::euclidean;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Independent Lloyd runs; the lowest-SSE run is kept.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 2,
            max_iter: 300,
            seed: 0,
            restarts: 10,
        }
    }
}

/// Fitted detector of any of the four kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorModel {
    KMeans(KMeansModel),
    Dbscan(DbscanModel),
    LogReg(LogRegModel),
    Gbdt(GbdtModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorKind {
    Gbdt,
    KMeans,
    LogReg,
    Dbscan,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Gbdt => "gbdt",
            DetectorKind::KMeans => "kmeans",
            DetectorKind::LogReg => "logreg",
            DetectorKind::Dbscan => "dbscan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gbdt" | "catboost" => Ok(DetectorKind::Gbdt),
            "kmeans" => Ok(DetectorKind::KMeans),
            "logreg" => Ok(DetectorKind::LogReg),
            "dbscan" => Ok(DetectorKind::Dbscan),
            other => Err(Error::Config(format!("unknown detector `{other}`"))),
        }
    }
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::KMeans(_) => DetectorKind::KMeans,
            DetectorModel::Dbscan(_) => DetectorKind::Dbscan,
            DetectorModel::LogReg(_) => DetectorKind::LogReg,
            DetectorModel::Gbdt(_) => DetectorKind::Gbdt,
        }
    }

    /// Out-of-sample ranking scores. DBSCAN is transductive and has none.
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            DetectorModel::KMeans(m) => m.score(x),
            DetectorModel::LogReg(m) => m.score(x),
            DetectorModel::Gbdt(m) => m.score(x),
            DetectorModel::Dbscan(_) => Err(Error::UnsupportedDetector(
                "DBSCAN labels only the rows it was fitted on".into(),
            )),
        }
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        match self {
            DetectorModel::KMeans(m) => {
                let _ = writeln!(s, "kmeans: k={} seed={}", m.centroids.len(), m.seed);
                for (i, c) in m.centroids.iter().enumerate() {
                    let head: Vec<String> = c.iter().take(6).map(|v| format!("{v:.4}")).collect();
                    let _ = writeln!(
                        s,
                        "  centroid {i}: dim={} [{}{}]",
                        c.len(),
                        head.join(", "),
                        if c.len() > 6 { ", ..." } else { "" }
                    );
                }
                let _ = writeln!(s, "  scaler: {}", describe_scaler(m.scaler.as_ref()));
            }
            DetectorModel::Dbscan(m) => {
                let _ = writeln!(
                    s,
                    "dbscan: eps={} min_pts={} rows={} clusters={} noise={}",
                    m.eps,
                    m.min_pts,
                    m.labels.len(),
                    m.n_clusters,
                    m.n_noise
                );
            }
            DetectorModel::LogReg(m) => {
                let _ = writeln!(s, "logreg: features={} bias={:.6}", m.weights.len(), m.bias);
                let _ = writeln!(s, "  scaler: {}", describe_scaler(Some(&m.scaler)));
            }
            DetectorModel::Gbdt(m) => {
                let leaves: usize = m
                    .trees
                    .iter()
                    .map(|t| {
                        t.nodes
                            .iter()
                            .filter(|n| matches!(n, Node::Leaf(_)))
                            .count()
                    })
                    .sum();
                let _ = writeln!(
                    s,
                    "gbdt: trees={} max_depth={} learning_rate={} focal_gamma={} base_score={:.6} leaves={leaves}",
                    m.trees.len(),
                    m.max_depth,
                    m.learning_rate,
                    m.gamma,
                    m.base_score
                );
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        match self {
            DetectorModel::KMeans(m) => {
                w.u8(0);
                w.u64(m.seed);
                w.u64(m.centroids.len() as u64);
                for c in &m.centroids {
                    w.f64s(c);
                }
                w.opt_scaler(m.scaler.as_ref());
            }
            DetectorModel::Dbscan(m) => {
                w.u8(1);
                w.f64(m.eps);
                w.u64(m.min_pts as u64);
                w.u64(m.labels.len() as u64);
                for (&l, &c) in m.labels.iter().zip(&m.core) {
                    w.i64(l);
                    w.u8(c as u8);
                }
            }
            DetectorModel::LogReg(m) => {
                w.u8(2);
                w.f64s(&m.weights);
                w.f64(m.bias);
                w.opt_scaler(Some(&m.scaler));
            }
            DetectorModel::Gbdt(m) => {
                w.u8(3);
                w.f64(m.base_score);
                w.f64(m.learning_rate);
                w.f64(m.gamma);
                w.u64(m.max_depth as u64);
                w.u64(m.n_features as u64);
                w.u64(m.trees.len() as u64);
                for t in &m.trees {
                    w.u64(t.nodes.len() as u64);
                    for n in &t.nodes {
                        match *n {
                            Node::Leaf(v) => {
                                w.u8(0);
                                w.f64(v);
                            }
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                w.u8(1);
                                w.u64(feature as u64);
                                w.f64(threshold);
                                w.u64(left as u64);
                                w.u64(right as u64);
                            }
                        }
                    }
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("detector model: bad magic".into()));
        }
        if r.u32()? != VERSION {
            return Err(Error::Format("detector model: unsupported version".into()));
        }
        let model = match r.u8()? {
            0 => {
                let seed = r.u64()?;
                let k = r.len()?;
                let centroids = (0..k).map(|_| r.f64s()).collect::<Result<_>>()?;
                DetectorModel::KMeans(KMeansModel {
                    centroids,
                    seed,
                    scaler: r.opt_scaler()?,
                })
            }
            1 => {
                let eps = r.f64()?;
                let min_pts = r.u64()? as usize;
                let n = r.len()?;
                let mut labels = Vec::with_capacity(n);
                let mut core = Vec::with_capacity(n);
                for _ in 0..n {
                    labels.push(r.i64()?);
                    core.push(r.u8()? != 0);
                }
                let n_clusters = labels
                    .iter()
                    .copied()
                    .max()
                    .map_or(0, |m| (m + 1).max(0) as usize);
                let n_noise = labels.iter().filter(|&&l| l == NOISE).count();
                DetectorModel::Dbscan(DbscanModel {
                    eps,
                    min_pts,
                    labels,
                    core,
                    n_clusters,
                    n_noise,
                })
            }
            2 => {
                let weights = r.f64s()?;
                let bias = r.f64()?;
                let scaler = r
                    .opt_scaler()?
                    .ok_or_else(|| Error::Format("logreg model without scaler".into()))?;
                DetectorModel::LogReg(LogRegModel {
                    weights,
                    bias,
                    scaler,
                })
            }
            3 => {
                let base_score = r.f64()?;
                let learning_rate = r.f64()?;
                let gamma = r.f64()?;
                let max_depth = r.u64()? as usize;
                let n_features = r.u64()? as usize;
                let n_trees = r.len()?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    let n_nodes = r.len()?;
                    let mut nodes = Vec::with_capacity(n_nodes);
                    for _ in 0..n_nodes {
                        nodes.push(match r.u8()? {
                            0 => Node::Leaf(r.f64()?),
                            1 => Node::Split {
                                feature: r.u64()? as usize,
                                threshold: r.f64()?,
                                left: r.u64()? as usize,
                                right: r.u64()? as usize,
                            },
                            t => return Err(Error::Format(format!("bad tree node tag {t}"))),
                        });
                    }
                    let ok = nodes.iter().all(|n| match *n {
                        Node::Split {
                            left,
                            right,
                            feature,
                            ..
                        } => left < n_nodes && right < n_nodes && feature < n_features,
                        Node::Leaf(_) => true,
                    });
                    if !ok || nodes.is_empty() {
                        return Err(Error::Format("tree references out of range".into()));
                    }
                    trees.push(Tree { nodes });
                }
                DetectorModel::Gbdt(GbdtModel {
                    base_score,
                    trees,
                    learning_rate,
                    gamma,
                    max_depth,
                    n_features,
                })
            }
            t => return Err(Error::Format(format!("unknown detector tag {t}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after detector model".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn describe_scaler(s: Option<&ScalerParams>) -> String {
    match s {
        None => "none".into(),
        Some(s) => format!("{:?} over {} columns", s.mode, s.cols()),
    }
}

const MAGIC: &[u8; 8] = b"TGDETECT";
const VERSION: u32 = 1;

pub(crate) struct ByteWriter {
    pub(crate) buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn i64(&mut self, v: i64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    pub(crate) fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
    pub(crate) fn opt_scaler(&mut self, s: Option<&ScalerParams>) {
        match s {
            None => self.u8(0),
            Some(s) => {
                self.u8(match s.mode {
                    ScalerMode::MinmaxThenStandardize => 1,
                    ScalerMode::StandardizeOnly => 2,
                });
                for v in [&s.min, &s.max, &s.mean, &s.std] {
                    self.f64s(v);
                }
            }
        }
    }
}

pub(crate) struct ByteReader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("unexpected end of model file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Length prefix, bounded by the remaining bytes.
    pub(crate) fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.buf.len() - self.pos {
            return Err(Error::Format("length prefix exceeds file size".into()));
        }
        Ok(n)
    }
    pub(crate) fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    pub(crate) fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8".into()))
    }
    pub(crate) fn opt_scaler(&mut self) -> Result<Option<ScalerParams>> {
        let mode = match self.u8()? {
            0 => return Ok(None),
            1 => ScalerMode::MinmaxThenStandardize,
            2 => ScalerMode::StandardizeOnly,
            t => return Err(Error::Format(format!("bad scaler tag {t}"))),
        };
        Ok(Some(ScalerParams {
            mode,
            min: self.f64s()?,
            max: self.f64s()?,
            mean: self.f64s()?,
            std: self.f64s()?,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Matrix, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 5) as f64, (i * 7 % 11) as f64 / 3.0])
            .collect();
        let y = (0..30).map(|i| u8::from(i % 5 >= 2)).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn every_kind_round_trips() {
        let (x, y) = data();
        let mut km = kmeans_fit(&x, 2, 3, 50).unwrap().model;
        km.scaler = Some(fit_scaler(&x, ScalerMode::StandardizeOnly).unwrap());
        let models = vec![
            DetectorModel::KMeans(km),
            DetectorModel::Dbscan(dbscan(&x, 1.5, 3).unwrap()),
            DetectorModel::LogReg(logreg_fit(&x, &y, &LogRegParams::default()).unwrap()),
            DetectorModel::Gbdt(
                gbdt_fit(
                    &x,
                    &y,
                    &GbdtParams {
                        iterations: 4,
                        depth: 3,
                        ..Default::default()
                    },
                )
                .unwrap()
                .model,
            ),
        ];
        for m in models {
            let back = DetectorModel::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(back, m);
            assert!(!m.describe().is_empty());
        }
    }

    #[test]
    fn corrupt_bytes_rejected() {
        let (x, y) = data();
        let m = DetectorModel::LogReg(logreg_fit(&x, &y, &LogRegParams::default()).unwrap());
        let b = m.to_bytes();
        assert!(DetectorModel::from_bytes(&b[..b.len() - 3]).is_err());
        assert!(DetectorModel::from_bytes(b"NOTAMODEL").is_err());
    }

    #[test]
    fn dbscan_cannot_score() {
        let (x, _) = data();
        let m = DetectorModel::Dbscan(dbscan(&x, 1.0, 2).unwrap());
        assert!(matches!(m.score(&x), Err(Error::UnsupportedDetector(_))));
    }
}
