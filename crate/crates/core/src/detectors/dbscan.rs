//! Density-based clustering over Euclidean epsilon-neighbourhoods.
//!
//! A point is core when at least `min_pts` points (itself included) lie
//! within `eps`. Clusters grow from core points in row order; a border point
//! joins the first cluster that reaches it. Everything else is noise (`-1`).

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::squared_distance;
use super::Matrix;
use crate::error::{Error, Result};

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            eps: 0.3,
            min_pts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbscanModel {
    pub eps: f64,
    pub min_pts: usize,
    pub labels: Vec<i64>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
    pub n_noise: usize,
}

pub(crate) fn neighbourhoods(x: &Matrix, eps: f64) -> Vec<Vec<usize>> {
    let eps2 = eps * eps;
    (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let a = x.row(i);
            (0..x.rows())
                .filter(|&j| squared_distance(a, x.row(j)) <= eps2)
                .collect()
        })
        .collect()
}

pub fn dbscan(x: &Matrix, eps: f64, min_pts: usize) -> Result<DbscanModel> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::Config(format!(
            "DBSCAN needs eps > 0 and min_pts >= 1, got eps={eps}, min_pts={min_pts}"
        )));
    }
    let n = x.rows();
    let hood = neighbourhoods(x, eps);
    let core: Vec<bool> = hood.iter().map(|h| h.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut n_clusters = 0usize;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start] != NOISE || !core[start] {
            continue;
        }
        let id = n_clusters as i64;
        n_clusters += 1;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &hood[p] {
                if labels[q] == NOISE {
                    labels[q] = id;
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    let n_noise = labels.iter().filter(|&&l| l == NOISE).count();
    Ok(DbscanModel {
        eps,
        min_pts,
        labels,
        core,
        n_clusters,
        n_noise,
    })
}
