use std::collections::BTreeMap;

use crate::detectors::{euclidean, Matrix, NOISE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterAgreement {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
    pub adjusted_rand: f64,
    pub n_clusters: usize,
    pub n_noise: usize,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Harmonic mean of homogeneity and completeness; 0 when both are 0.
pub fn v_measure(homogeneity: f64, completeness: f64) -> f64 {
    if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    }
}

/// Entropy-based agreement plus ARI. Noise (`-1`) is treated as one more
/// predicted label; it is also counted separately.
pub fn cluster_agreement(pred: &[i64], truth: &[i64]) -> Result<ClusterAgreement> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let n_noise = pred.iter().filter(|&&l| l == NOISE).count();
    let mut clusters: Vec<i64> = pred.iter().copied().filter(|&l| l != NOISE).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let n_clusters = clusters.len();
    if pred.is_empty() {
        return Ok(ClusterAgreement {
            homogeneity: 1.0,
            completeness: 1.0,
            v_measure: 1.0,
            adjusted_rand: 1.0,
            n_clusters,
            n_noise,
        });
    }

    let mut table: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut by_pred: BTreeMap<i64, usize> = BTreeMap::new();
    let mut by_true: BTreeMap<i64, usize> = BTreeMap::new();
    for (&k, &c) in pred.iter().zip(truth) {
        *table.entry((c, k)).or_default() += 1;
        *by_pred.entry(k).or_default() += 1;
        *by_true.entry(c).or_default() += 1;
    }
    let n = pred.len() as f64;
    let h_c = entropy(by_true.values().copied(), n);
    let h_k = entropy(by_pred.values().copied(), n);
    // H(C|K) = -sum n_ck/n ln(n_ck/n_k)
    let mut h_c_given_k = 0.0;
    let mut h_k_given_c = 0.0;
    for (&(c, k), &nck) in &table {
        let p = nck as f64 / n;
        h_c_given_k -= p * (nck as f64 / by_pred[&k] as f64).ln();
        h_k_given_c -= p * (nck as f64 / by_true[&c] as f64).ln();
    }
    let homogeneity = if h_c == 0.0 {
        1.0
    } else {
        1.0 - h_c_given_k / h_c
    };
    let completeness = if h_k == 0.0 {
        1.0
    } else {
        1.0 - h_k_given_c / h_k
    };
    let v_measure = v_measure(homogeneity, completeness);

    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let a: f64 = by_pred.values().map(|&c| choose2(c)).sum();
    let b: f64 = by_true.values().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(pred.len()).max(1.0);
    let max = 0.5 * (a + b);
    let adjusted_rand = if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    };

    Ok(ClusterAgreement {
        homogeneity: homogeneity.clamp(0.0, 1.0),
        completeness: completeness.clamp(0.0, 1.0),
        v_measure: v_measure.clamp(0.0, 1.0),
        adjusted_rand,
        n_clusters,
        n_noise,
    })
}

/// Mean silhouette over non-noise rows; singleton clusters contribute 0.
pub fn silhouette(x: &Matrix, labels: &[i64]) -> Result<f64> {
    if labels.len() != x.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
    let mut ids: Vec<i64> = members.iter().map(|&i| labels[i]).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Domain(format!(
            "silhouette needs at least 2 clusters, found {}",
            ids.len()
        )));
    }
    let slot = |l: i64| ids.binary_search(&l).expect("label listed");
    let mut sizes = vec![0usize; ids.len()];
    for &i in &members {
        sizes[slot(labels[i])] += 1;
    }
    let mut total = 0.0;
    for &i in &members {
        let own = slot(labels[i]);
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; ids.len()];
        for &j in &members {
            if j != i {
                sums[slot(labels[j])] += euclidean(x.row(i), x.row(j));
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..ids.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / members.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    #[test]
    fn identity_partition() {
        let y = [0, 0, 1, 1, 2, 2, 2];
        let a = cluster_agreement(&y, &y).unwrap();
        assert_eq!(
            (a.homogeneity, a.completeness, a.v_measure, a.adjusted_rand),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn single_cluster_over_two_classes() {
        let a = cluster_agreement(&[0; 6], &[0, 0, 0, 1, 1, 1]).unwrap();
        assert_eq!(
            (a.homogeneity, a.completeness, a.v_measure),
            (0.0, 1.0, 0.0)
        );
    }

    #[test]
    fn length_mismatch() {
        assert!(cluster_agreement(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn hand_computed_case() {
        // pred {0,0,1,1}, truth {0,0,0,1}: H(C)=H(.75,.25), H(C|K)=0.5 ln2.
        let a = cluster_agreement(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        let hc = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let ln2 = std::f64::consts::LN_2;
        assert!((a.homogeneity - (1.0 - 0.5 * ln2 / hc)).abs() < 1e-12);
        // H(K|C): class 0 splits 2/1 over 3 of 4 points.
        let hkc =
            0.75 * -((2.0f64 / 3.0) * (2.0f64 / 3.0).ln() + (1.0 / 3.0) * (1.0f64 / 3.0).ln());
        assert!((a.completeness - (1.0 - hkc / ln2)).abs() < 1e-12);
        // ARI: index 1, a = 2, b = 3, expected = 1, max = 2.5
        assert!((a.adjusted_rand - 0.0).abs() < 1e-12);
    }

    #[test]
    fn noise_counted_separately() {
        let a = cluster_agreement(&[0, 0, -1, 1, 1, -1], &[0, 0, 0, 1, 1, 1]).unwrap();
        assert_eq!((a.n_clusters, a.n_noise), (2, 2));
    }

    #[test]
    fn v_is_harmonic_mean() {
        let mut rng = seeds::rng(4);
        for _ in 0..100 {
            let p: Vec<i64> = (0..30).map(|_| rng.random_range(-1..3)).collect();
            let t: Vec<i64> = (0..30).map(|_| rng.random_range(0..2)).collect();
            let a = cluster_agreement(&p, &t).unwrap();
            if a.homogeneity + a.completeness > 0.0 {
                let hm = 2.0 * a.homogeneity * a.completeness / (a.homogeneity + a.completeness);
                assert!((a.v_measure - hm).abs() < 1e-12);
            }
            assert!(a.adjusted_rand >= -0.5 && a.adjusted_rand <= 1.0);
        }
    }

    #[test]
    fn random_labelings_have_ari_near_zero() {
        let mut rng = seeds::rng(9);
        let truth: Vec<i64> = (0..200).map(|i| i % 2).collect();
        let mean: f64 = (0..100)
            .map(|_| {
                let p: Vec<i64> = (0..200).map(|_| rng.random_range(0..2)).collect();
                cluster_agreement(&p, &truth).unwrap().adjusted_rand
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean.abs() < 0.1, "{mean}");
    }

    #[test]
    fn silhouette_two_tight_pairs() {
        let x = Matrix::new(4, 1, vec![0.0, 0.1, 10.0, 10.1]).unwrap();
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        // point 0: a = 0.1, b = 10.05; point 1: a = 0.1, b = 9.95 (symmetric for the others)
        let want = ((10.05 - 0.1) / 10.05 + (9.95 - 0.1) / 9.95) / 2.0;
        assert!((s - want).abs() < 1e-12);
        assert!((s - 0.990).abs() < 1e-3);
    }

    #[test]
    fn silhouette_coincident_clusters() {
        let x = Matrix::new(4, 1, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(silhouette(&x, &[0, 0, 1, 1]).unwrap() <= 1e-12);
    }

    #[test]
    fn silhouette_needs_two_clusters() {
        let x = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(silhouette(&x, &[0, 0, -1]).is_err());
    }

    #[test]
    fn silhouette_bounded_and_ignores_noise() {
        let mut rng = seeds::rng(2);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random(), rng.random()]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<i64> = (0..40).map(|i| [0, 1, 2, -1][i % 4]).collect();
        let s = silhouette(&x, &labels).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }
}
