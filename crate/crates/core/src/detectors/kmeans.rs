use rand::seq::index::sample;

use super::matrix::squared_distance;
use super::{apply_scaler, Matrix, ScalerParams};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    /// Standardization applied before distances, when fitted through a pipeline.
    pub scaler: Option<ScalerParams>,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: KMeansModel,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub cluster: Vec<usize>,
    /// `d(nearest) - d(second nearest)`; zero or negative.
    pub margin: Vec<f64>,
}

fn nearest(centroids: &[Vec<f64>], row: &[f64]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(k, c)| (k, squared_distance(row, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// Lloyd's algorithm from `k` distinct randomly chosen rows.
pub fn kmeans_fit(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > x.rows() {
        return Err(Error::Dimension(format!(
            "k = {k} exceeds {} rows",
            x.rows()
        )));
    }
    let mut rng = seeds::rng(seed);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, x.rows(), k)
        .into_iter()
        .map(|i| x.row(i).to_vec())
        .collect();
    let mut labels = vec![usize::MAX; x.rows()];
    let mut sse = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut total = 0.0;
        for (i, row) in x.iter_rows().enumerate() {
            let (c, d) = nearest(&centroids, row);
            total += d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        sse.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; x.cols()]; k];
        let mut counts = vec![0usize; k];
        for (row, &c) in x.iter_rows().zip(&labels) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeansFit {
        model: KMeansModel {
            centroids,
            seed,
            scaler: None,
        },
        labels,
        sse,
        iterations,
    })
}

/// Runs Lloyd from `restarts` seeds derived from `seed` and keeps the run
/// with the lowest final SSE; ties go to the earliest run.
pub fn kmeans_fit_best(
    x: &Matrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<KMeansFit> {
    let mut best: Option<KMeansFit> = None;
    for r in 0..restarts.max(1) {
        let fit = kmeans_fit(x, k, seeds::derive_index(seed, r as u64), max_iter)?;
        let sse = fit.sse.last().copied().unwrap_or(f64::INFINITY);
        if best
            .as_ref()
            .is_none_or(|b| sse < b.sse.last().copied().unwrap_or(f64::INFINITY))
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one run"))
}

impl KMeansModel {
    fn prepare(&self, x: &Matrix) -> Result<Matrix> {
        let dim = self.centroids.first().map_or(0, Vec::len);
        let x = match &self.scaler {
            Some(s) => apply_scaler(s, x)?,
            None => x.clone(),
        };
        if x.cols() != dim {
            return Err(Error::Dimension(format!(
                "centroids have {dim} columns, matrix has {}",
                x.cols()
            )));
        }
        Ok(x)
    }

    pub fn assign(&self, x: &Matrix) -> Result<Assignment> {
        let x = self.prepare(x)?;
        let mut cluster = Vec::with_capacity(x.rows());
        let mut margin = Vec::with_capacity(x.rows());
        for row in x.iter_rows() {
            let mut d: Vec<(usize, f64)> = self
                .centroids
                .iter()
                .enumerate()
                .map(|(k, c)| (k, squared_distance(row, c).sqrt()))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            cluster.push(d[0].0);
            margin.push(if d.len() > 1 { d[0].1 - d[1].1 } else { 0.0 });
        }
        Ok(Assignment { cluster, margin })
    }

    /// Signed ranking score `d(x, c0) - d(x, c1)`: larger means closer to
    /// centroid 1. Requires exactly two centroids.
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        if self.centroids.len() != 2 {
            return Err(Error::Config(format!(
                "margin scores need k = 2, model has {}",
                self.centroids.len()
            )));
        }
        let x = self.prepare(x)?;
        Ok(x.iter_rows()
            .map(|r| {
                squared_distance(r, &self.centroids[0]).sqrt()
                    - squared_distance(r, &self.centroids[1]).sqrt()
            })
            .collect())
    }
}

pub fn kmeans_assign(model: &KMeansModel, x: &Matrix) -> Result<Assignment> {
    model.assign(x)
}
