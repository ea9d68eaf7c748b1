use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auc_roc, cluster_agreement, dp_metric, select_top_k, silhouette, stratified_folds};
use super::{ClusterAgreement, CvSpec};
use crate::detectors::{
    dbscan, fit_scaler, gbdt_fit, kmeans_fit_best, logreg_fit, DbscanParams, DetectorKind,
    DetectorModel, GbdtParams, KMeansParams, LogRegParams, Matrix, ScalerMode,
};
use crate::error::{Error, Result};
use crate::features::{Family, FeatureMatrix};
use crate::imaging::Variant;
use crate::seeds;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub kmeans: KMeansParams,
    pub dbscan: DbscanParams,
    pub logreg: LogRegParams,
    pub gbdt: GbdtParams,
}

/// One feature family extracted from one crop variant, with the
/// clean (0) / attacked (1) target per row.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub variant: Variant,
    pub features: FeatureMatrix,
    pub labels: Vec<u8>,
}

impl FeatureSet {
    pub fn family(&self) -> Family {
        self.features.family
    }

    fn cell(&self) -> String {
        format!("{}/{}", self.family(), self.variant)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Cell {
    pub family: Family,
    pub variant: Variant,
    pub model: DetectorKind,
    pub fold_aucs: Vec<f64>,
    pub auc: f64,
    pub dp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Cell {
    pub family: Family,
    pub variant: Variant,
    pub agreement: ClusterAgreement,
    /// Absent when fewer than two clusters survive.
    pub silhouette: Option<f64>,
}

/// A fitted detector plus the sign that makes larger scores mean "attacked".
#[derive(Debug, Clone, PartialEq)]
pub struct FittedDetector {
    pub model: DetectorModel,
    pub orientation: f64,
    /// Oriented scores on the training rows.
    pub train_scores: Vec<f64>,
}

impl FittedDetector {
    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .model
            .score(x)?
            .into_iter()
            .map(|s| s * self.orientation)
            .collect())
    }
}

fn class_mean(scores: &[f64], y: &[u8], class: u8) -> f64 {
    let (s, n) = scores
        .iter()
        .zip(y)
        .filter(|(_, &l)| l == class)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Fits one detector on training rows. KMeans sees standardized features and
/// is scored by its signed centroid margin; the cluster that sits on the
/// attacked side of the training labels becomes the positive direction.
pub fn fit_detector(
    kind: DetectorKind,
    params: &ModelParams,
    x: &Matrix,
    y: &[u8],
    seed: u64,
) -> Result<FittedDetector> {
    let model = match kind {
        DetectorKind::KMeans => {
            let p = &params.kmeans;
            if p.k != 2 {
                return Err(Error::Config(format!(
                    "KMeans detector needs k = 2, got {}",
                    p.k
                )));
            }
            let scaler = fit_scaler(x, ScalerMode::StandardizeOnly)?;
            let z = crate::detectors::apply_scaler(&scaler, x)?;
            let mut m = kmeans_fit_best(&z, 2, seed, p.max_iter, p.restarts)?.model;
            m.scaler = Some(scaler);
            DetectorModel::KMeans(m)
        }
        DetectorKind::LogReg => DetectorModel::LogReg(logreg_fit(x, y, &params.logreg)?),
        DetectorKind::Gbdt => DetectorModel::Gbdt(gbdt_fit(x, y, &params.gbdt)?.model),
        DetectorKind::Dbscan => {
            return Err(Error::UnsupportedDetector(
                "DBSCAN has no out-of-sample scores; use the clustering experiment".into(),
            ))
        }
    };
    let raw = model.score(x)?;
    let orientation = if class_mean(&raw, y, 1) >= class_mean(&raw, y, 0) {
        1.0
    } else {
        -1.0
    };
    Ok(FittedDetector {
        model,
        orientation,
        train_scores: raw.into_iter().map(|s| s * orientation).collect(),
    })
}

/// Maps each cluster id to the majority label among its members (ties to 0).
pub fn majority_mapping(clusters: &[usize], y: &[u8]) -> BTreeMap<usize, u8> {
    let mut counts: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
    for (&c, &l) in clusters.iter().zip(y) {
        counts.entry(c).or_default()[l.min(1) as usize] += 1;
    }
    counts
        .into_iter()
        .map(|(c, [n0, n1])| (c, u8::from(n1 > n0)))
        .collect()
}

fn check_unique(sets: &[FeatureSet]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in sets {
        if !seen.insert((s.family(), s.variant)) {
            return Err(Error::Config(format!("duplicate cell {}", s.cell())));
        }
        if s.labels.len() != s.features.n_rows() {
            return Err(Error::Dimension(format!(
                "{}: {} labels for {} rows",
                s.cell(),
                s.labels.len(),
                s.features.n_rows()
            ))
            .in_cell(s.cell()));
        }
    }
    Ok(())
}

struct FoldOutcome {
    set: usize,
    model: usize,
    test_rows: Vec<usize>,
    scores: Vec<f64>,
}

/// Stratified cross-validation of every (feature set x model) cell. Top-K
/// selection, scaling and fitting all see the training fold only.
pub fn run_classification_experiment(
    sets: &[FeatureSet],
    models: &[DetectorKind],
    params: &ModelParams,
    cv: &CvSpec,
    seed: u64,
) -> Result<Vec<Table1Cell>> {
    check_unique(sets)?;
    if models.is_empty() || sets.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(d) = models.iter().find(|&&m| m == DetectorKind::Dbscan) {
        return Err(Error::UnsupportedDetector(format!(
            "{} cannot be cross-validated",
            d.as_str()
        )));
    }
    let plans = sets
        .iter()
        .map(|s| {
            stratified_folds(&s.labels, cv.folds, seeds::derive(seed, "folds"))
                .map_err(|e| e.in_cell(s.cell()))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|s| (0..cv.folds).map(move |f| (s, f)))
        .collect();
    let outcomes: Vec<Vec<FoldOutcome>> = jobs
        .par_iter()
        .map(|&(si, fold)| {
            let set = &sets[si];
            let (train, test) = plans[si].split(fold);
            let x = set.features.to_matrix();
            let x_train = x.select_rows(&train);
            let y_train: Vec<u8> = train.iter().map(|&i| set.labels[i]).collect();
            let cols = select_top_k(&x_train, &y_train)
                .map_err(|e| e.in_cell(format!("{} fold {fold}", set.cell())))?;
            let x_train = x_train.select_columns(&cols)?;
            let x_test = x.select_rows(&test).select_columns(&cols)?;
            models
                .iter()
                .enumerate()
                .map(|(mi, &kind)| {
                    let cell = format!("{}/{} fold {fold}", set.cell(), kind.as_str());
                    let tag = format!("{}/{}/{}", kind.as_str(), set.family(), set.variant);
                    let fit_seed = seeds::derive_index(seeds::derive(seed, &tag), fold as u64);
                    let fitted = fit_detector(kind, params, &x_train, &y_train, fit_seed)
                        .map_err(|e| e.in_cell(&cell))?;
                    let scores = fitted.score(&x_test).map_err(|e| e.in_cell(&cell))?;
                    Ok(FoldOutcome {
                        set: si,
                        model: mi,
                        test_rows: test.clone(),
                        scores,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut grouped: BTreeMap<(usize, usize), Vec<FoldOutcome>> = BTreeMap::new();
    for o in outcomes.into_iter().flatten() {
        grouped.entry((o.set, o.model)).or_default().push(o);
    }
    grouped
        .into_iter()
        .map(|((si, mi), folds)| {
            let set = &sets[si];
            let cell = format!("{}/{}", set.cell(), models[mi].as_str());
            let labels_of =
                |rows: &[usize]| rows.iter().map(|&i| set.labels[i]).collect::<Vec<u8>>();
            let fold_aucs = folds
                .iter()
                .map(|f| auc_roc(&f.scores, &labels_of(&f.test_rows)))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.in_cell(&cell))?;
            let auc = if cv.pooled {
                let scores: Vec<f64> = folds.iter().flat_map(|f| f.scores.clone()).collect();
                let rows: Vec<usize> = folds.iter().flat_map(|f| f.test_rows.clone()).collect();
                auc_roc(&scores, &labels_of(&rows)).map_err(|e| e.in_cell(&cell))?
            } else {
                fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64
            };
            Ok(Table1Cell {
                family: set.family(),
                variant: set.variant,
                model: models[mi],
                fold_aucs,
                auc,
                dp: dp_metric(auc.clamp(0.0, 1.0))?,
            })
        })
        .collect()
}

/// DBSCAN over every row of each feature set, scored against the
/// clean/attacked labels.
pub fn run_clustering_experiment(
    sets: &[FeatureSet],
    params: &DbscanParams,
) -> Result<Vec<Table2Cell>> {
    check_unique(sets)?;
    sets.par_iter()
        .map(|set| {
            let x = set.features.to_matrix();
            let m = dbscan(&x, params.eps, params.min_pts).map_err(|e| e.in_cell(set.cell()))?;
            let truth: Vec<i64> = set.labels.iter().map(|&l| l as i64).collect();
            let agreement =
                cluster_agreement(&m.labels, &truth).map_err(|e| e.in_cell(set.cell()))?;
            Ok(Table2Cell {
                family: set.family(),
                variant: set.variant,
                agreement,
                silhouette: silhouette(&x, &m.labels).ok(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_set(variant: Variant, shift: f64, seed: u64) -> FeatureSet {
        let mut rng = seeds::rng(seed);
        let n = 60;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let cols = 6;
        let values: Vec<f64> = labels
            .iter()
            .flat_map(|&l| {
                let mut row: Vec<f64> = (0..cols).map(|_| rng.random_range(0.0..0.1)).collect();
                for v in &mut row[1..5] {
                    *v += l as f64 * shift;
                }
                row
            })
            .collect();
        FeatureSet {
            variant,
            features: FeatureMatrix::new(
                Family::Histogram,
                (0..n).map(|i| format!("r{i}")).collect(),
                (0..cols).map(|c| format!("c{c}")).collect(),
                values,
            )
            .unwrap(),
            labels,
        }
    }

    #[test]
    fn separable_cells_reach_full_dp() {
        let sets = vec![toy_set(Variant::Original, 1.0, 1)];
        let kinds = [
            DetectorKind::KMeans,
            DetectorKind::LogReg,
            DetectorKind::Gbdt,
        ];
        let params = ModelParams {
            gbdt: GbdtParams {
                iterations: 10,
                depth: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let t =
            run_classification_experiment(&sets, &kinds, &params, &CvSpec::default(), 5).unwrap();
        assert_eq!(t.len(), 3);
        for c in &t {
            assert_eq!(c.fold_aucs.len(), 10);
            assert!(c.dp > 0.99, "{:?} {}", c.model, c.dp);
        }
    }

    #[test]
    fn empty_model_list_gives_empty_table() {
        let sets = vec![toy_set(Variant::Original, 1.0, 1)];
        let t = run_classification_experiment(
            &sets,
            &[],
            &ModelParams::default(),
            &CvSpec::default(),
            0,
        )
        .unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn duplicate_cells_rejected() {
        let sets = vec![
            toy_set(Variant::Original, 1.0, 1),
            toy_set(Variant::Original, 1.0, 2),
        ];
        assert!(matches!(
            run_clustering_experiment(&sets, &DbscanParams::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn errors_carry_cell_coordinates() {
        let mut set = toy_set(Variant::CroppedV1, 1.0, 1);
        set.labels = vec![0; 60];
        set.labels[..5].fill(1);
        let err = run_classification_experiment(
            &[set],
            &[DetectorKind::LogReg],
            &ModelParams::default(),
            &CvSpec::default(),
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("histogram/cropped_v1"), "{err}");
    }

    #[test]
    fn pooled_mode_runs() {
        let sets = vec![toy_set(Variant::Original, 1.0, 3)];
        let cv = CvSpec {
            folds: 5,
            pooled: true,
        };
        let t = run_classification_experiment(
            &sets,
            &[DetectorKind::LogReg],
            &ModelParams::default(),
            &cv,
            1,
        )
        .unwrap();
        assert!(t[0].dp > 0.99);
    }

    #[test]
    fn clustering_on_separated_toy_data() {
        let sets = vec![toy_set(Variant::Original, 1.0, 4)];
        let t = run_clustering_experiment(
            &sets,
            &DbscanParams {
                eps: 0.3,
                min_pts: 5,
            },
        )
        .unwrap();
        assert_eq!(t[0].agreement.n_clusters, 2);
        assert_eq!(t[0].agreement.homogeneity, 1.0);
        assert!(t[0].silhouette.unwrap() > 0.5);
    }

    #[test]
    fn single_cluster_has_no_silhouette() {
        let sets = vec![toy_set(Variant::Original, 0.0, 4)];
        let t = run_clustering_experiment(
            &sets,
            &DbscanParams {
                eps: 0.5,
                min_pts: 5,
            },
        )
        .unwrap();
        assert_eq!(t[0].agreement.n_clusters, 1);
        assert_eq!(t[0].silhouette, None);
    }

    #[test]
    fn majority_labels() {
        let m = majority_mapping(&[0, 0, 1, 1, 1], &[1, 1, 0, 0, 1]);
        assert_eq!(m[&0], 1);
        assert_eq!(m[&1], 0);
    }
}
