//! Cross-validated detection experiments and the metrics they report.

mod cluster;
mod experiment;
mod metrics;
mod report;

pub use cluster::{cluster_agreement, silhouette, v_measure, ClusterAgreement};
pub use experiment::{
    fit_detector, majority_mapping, run_classification_experiment, run_clustering_experiment,
    FeatureSet, FittedDetector, ModelParams, Table1Cell, Table2Cell,
};
pub use metrics::{
    auc_roc, dp_metric, mutual_information, select_top_k, stratified_folds, top_k_size, CvSpec,
    FoldPlan, MI_BINS,
};
pub use report::{ExperimentReport, Layout, TABLE1_MODELS, TABLE2_METRICS};
