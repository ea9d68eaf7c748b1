use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::detectors::Matrix;
use crate::error::{Error, Result};
use crate::seeds;

/// Mann-Whitney AUC with average ranks for ties, so a tied positive/negative
/// pair counts one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Training("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks doubled to stay in integers: tie group [i, j) gets i + j + 1.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank_sum2 += pos_in_group * (i + j + 1) as u64;
        i = j;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    // 2U = 2R - p(p+1)
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// Discriminative power `2 |0.5 - auc|`.
pub fn dp_metric(auc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&auc) {
        return Err(Error::Domain(format!("AUC {auc} outside [0, 1]")));
    }
    Ok(2.0 * (0.5 - auc).abs())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Train and test row indices of fold `f`, each ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSpec {
    pub folds: usize,
    /// Pool test scores across folds into one AUC instead of averaging per-fold AUCs.
    pub pooled: bool,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec {
            folds: 10,
            pooled: false,
        }
    }
}

/// Each class is shuffled and dealt round-robin; the dealing position carries
/// over from one class to the next so fold sizes stay within one of each other.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = seeds::rng(seed);
    let mut assignments = vec![0; labels.len()];
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut next = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < k {
            return Err(Error::Config(format!(
                "class {c} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

pub const MI_BINS: usize = 16;

/// Equal-frequency bin index per value. Sorted position `r` maps to
/// `r * bins / n`; equal values all take the bin of their first occurrence.
pub(crate) fn equal_frequency_bins(column: &[f64], bins: usize) -> Vec<usize> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0; n];
    let mut current = 0;
    for (r, &i) in order.iter().enumerate() {
        if r == 0 || column[i] != column[order[r - 1]] {
            current = r * bins / n;
        }
        out[i] = current;
    }
    out
}

/// Plug-in mutual information (nats) between a 16-bin discretized column and
/// binary labels.
pub fn mutual_information(column: &[f64], labels: &[u8]) -> Result<f64> {
    if column.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} labels",
            column.len(),
            labels.len()
        )));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature value".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Domain("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Training(
            "mutual information needs both classes".into(),
        ));
    }
    let bins = equal_frequency_bins(column, MI_BINS);
    let mut joint = [[0usize; 2]; MI_BINS];
    for (&b, &l) in bins.iter().zip(labels) {
        joint[b][l as usize] += 1;
    }
    let n = labels.len() as f64;
    let py = [(labels.len() - pos) as f64 / n, pos as f64 / n];
    let mut mi = 0.0;
    for row in &joint {
        let px = (row[0] + row[1]) as f64 / n;
        for (y, &c) in row.iter().enumerate() {
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * (pxy / (px * py[y])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// `floor(sqrt(n))`, exact for all `usize`.
pub fn top_k_size(n_train: usize) -> usize {
    let mut k = (n_train as f64).sqrt() as usize;
    while k * k > n_train {
        k -= 1;
    }
    while (k + 1) * (k + 1) <= n_train {
        k += 1;
    }
    k
}

/// Indices of the `floor(sqrt(N_train))` highest-MI columns, in ascending
/// column order. Ties at the cut go to the lower index.
pub fn select_top_k(x_train: &Matrix, y_train: &[u8]) -> Result<Vec<usize>> {
    if x_train.rows() == 0 {
        return Err(Error::Dimension("no training rows".into()));
    }
    let k = top_k_size(x_train.rows()).min(x_train.cols());
    let mi: Vec<f64> = (0..x_train.cols())
        .map(|c| mutual_information(&x_train.column(c), y_train))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..mi.len()).collect();
    order.sort_by(|&a, &b| mi[b].total_cmp(&mi[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}
