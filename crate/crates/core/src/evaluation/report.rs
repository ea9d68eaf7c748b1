use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ClusterAgreement, Table1Cell, Table2Cell};
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::features::Family;
use crate::imaging::Variant;

/// Everything the two tables report, plus run metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub table1: Vec<Table1Cell>,
    pub table2: Vec<Table2Cell>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Machine tags and full-precision values.
    Full,
    /// Human headings and four decimals, shaped like the published tables.
    Paper,
}

pub const TABLE1_MODELS: [DetectorKind; 3] = [
    DetectorKind::Gbdt,
    DetectorKind::KMeans,
    DetectorKind::LogReg,
];

pub const TABLE2_METRICS: [&str; 7] = [
    "homogeneity",
    "completeness",
    "v_measure",
    "adjusted_rand",
    "silhouette",
    "n_clusters",
    "n_noise",
];

fn family_label(f: Family) -> &'static str {
    match f {
        Family::Embeddings => "Embeddings",
        Family::Ssim => "SSIM",
        Family::Histogram => "Histograms",
    }
}

fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::Original => "Original image",
        Variant::CroppedV1 => "Cropped image v1",
        Variant::CroppedV2 => "Cropped image v2",
    }
}

fn model_label(m: DetectorKind) -> &'static str {
    match m {
        DetectorKind::Gbdt => "Catboost (surrogate)",
        DetectorKind::KMeans => "KMeans",
        DetectorKind::LogReg => "Logistic regression",
        DetectorKind::Dbscan => "DBSCAN",
    }
}

fn metric_label(m: &str) -> &'static str {
    match m {
        "homogeneity" => "Homogeneity",
        "completeness" => "Completeness",
        "v_measure" => "V-measure",
        "adjusted_rand" => "Adjusted Rand Index",
        "silhouette" => "Silhouette",
        "n_clusters" => "Clusters",
        _ => "Noise points",
    }
}

fn fmt_value(v: Option<f64>, layout: Layout) -> String {
    match (v, layout) {
        (None, _) => "NA".into(),
        (Some(v), Layout::Full) => v.to_string(),
        (Some(v), Layout::Paper) => format!("{v:.4}"),
    }
}

fn metric(a: &ClusterAgreement, sil: Option<f64>, name: &str) -> Option<f64> {
    match name {
        "homogeneity" => Some(a.homogeneity),
        "completeness" => Some(a.completeness),
        "v_measure" => Some(a.v_measure),
        "adjusted_rand" => Some(a.adjusted_rand),
        "silhouette" => sil,
        "n_clusters" => Some(a.n_clusters as f64),
        _ => Some(a.n_noise as f64),
    }
}

fn cells() -> impl Iterator<Item = (Family, Variant)> {
    Family::ALL
        .into_iter()
        .flat_map(|f| Variant::ALL.into_iter().map(move |v| (f, v)))
}

impl ExperimentReport {
    pub fn dp(&self, family: Family, variant: Variant, model: DetectorKind) -> Option<f64> {
        self.table1
            .iter()
            .find(|c| c.family == family && c.variant == variant && c.model == model)
            .map(|c| c.dp)
    }

    pub fn clustering(&self, family: Family, variant: Variant) -> Option<&Table2Cell> {
        self.table2
            .iter()
            .find(|c| c.family == family && c.variant == variant)
    }

    /// DP per (family x variant) row and model column; missing cells print `NA`.
    pub fn table1_csv(&self, layout: Layout) -> String {
        let mut out = String::new();
        match layout {
            Layout::Full => out.push_str("family,variant"),
            Layout::Paper => out.push_str("Features,Variant"),
        }
        for m in TABLE1_MODELS {
            out.push(',');
            out.push_str(match layout {
                Layout::Full => m.as_str(),
                Layout::Paper => model_label(m),
            });
        }
        out.push('\n');
        for (f, v) in cells() {
            match layout {
                Layout::Full => write!(out, "{f},{v}").unwrap(),
                Layout::Paper => write!(out, "{},{}", family_label(f), variant_label(v)).unwrap(),
            }
            for m in TABLE1_MODELS {
                write!(out, ",{}", fmt_value(self.dp(f, v, m), layout)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Metric rows by (family x variant) columns.
    pub fn table2_csv(&self, layout: Layout) -> String {
        let mut out = String::from(match layout {
            Layout::Full => "metric",
            Layout::Paper => "Metric",
        });
        for (f, v) in cells() {
            match layout {
                Layout::Full => write!(out, ",{f}/{v}").unwrap(),
                Layout::Paper => {
                    write!(out, ",{} / {}", family_label(f), variant_label(v)).unwrap()
                }
            }
        }
        out.push('\n');
        for name in TABLE2_METRICS {
            out.push_str(match layout {
                Layout::Full => name,
                Layout::Paper => metric_label(name),
            });
            for (f, v) in cells() {
                let value = self
                    .clustering(f, v)
                    .and_then(|c| metric(&c.agreement, c.silhouette, name));
                let text = match (name, value) {
                    ("n_clusters" | "n_noise", Some(x)) => format!("{}", x as u64),
                    _ => fmt_value(value, layout),
                };
                write!(out, ",{text}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn metadata_text(&self) -> String {
        self.metadata
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Lossless long form used between the evaluate and report stages.
    pub fn to_results_text(&self) -> String {
        let mut out = String::from("kind,family,variant,model,key,value\n");
        for c in &self.table1 {
            let prefix = format!("table1,{},{},{}", c.family, c.variant, c.model.as_str());
            writeln!(out, "{prefix},auc,{}", c.auc).unwrap();
            writeln!(out, "{prefix},dp,{}", c.dp).unwrap();
            for (i, a) in c.fold_aucs.iter().enumerate() {
                writeln!(out, "{prefix},fold_auc_{i},{a}").unwrap();
            }
        }
        for c in &self.table2 {
            for name in TABLE2_METRICS {
                if let Some(v) = metric(&c.agreement, c.silhouette, name) {
                    writeln!(out, "table2,{},{},dbscan,{name},{v}", c.family, c.variant).unwrap();
                }
            }
        }
        for (k, v) in &self.metadata {
            writeln!(out, "meta,,,,{k},{v}").unwrap();
        }
        out
    }

    pub fn from_results_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: String| Error::Format(format!("results line {line}: {m}"));
        let mut t1: BTreeMap<(Family, Variant, DetectorKind), Table1Cell> = BTreeMap::new();
        let mut t2: BTreeMap<(Family, Variant), BTreeMap<String, f64>> = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.splitn(6, ',').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, "expected 6 fields".into()));
            }
            if f[0] == "meta" {
                metadata.insert(f[4].to_string(), f[5].to_string());
                continue;
            }
            let family: Family = f[1].parse()?;
            let variant: Variant = f[2].parse().map_err(|m| bad(i + 1, m))?;
            let value: f64 = f[5]
                .parse()
                .map_err(|_| bad(i + 1, format!("`{}` is not a number", f[5])))?;
            match f[0] {
                "table1" => {
                    let model = DetectorKind::parse(f[3])?;
                    let c = t1.entry((family, variant, model)).or_insert(Table1Cell {
                        family,
                        variant,
                        model,
                        fold_aucs: Vec::new(),
                        auc: f64::NAN,
                        dp: f64::NAN,
                    });
                    match f[4] {
                        "auc" => c.auc = value,
                        "dp" => c.dp = value,
                        k if k.starts_with("fold_auc_") => c.fold_aucs.push(value),
                        k => return Err(bad(i + 1, format!("unknown key `{k}`"))),
                    }
                }
                "table2" => {
                    t2.entry((family, variant))
                        .or_default()
                        .insert(f[4].to_string(), value);
                }
                k => return Err(bad(i + 1, format!("unknown kind `{k}`"))),
            }
        }
        let table2 = t2
            .into_iter()
            .map(|((family, variant), m)| {
                let get = |k: &str| {
                    m.get(k).copied().ok_or_else(|| {
                        Error::Format(format!("results: {family}/{variant} lacks {k}"))
                    })
                };
                Ok(Table2Cell {
                    family,
                    variant,
                    agreement: ClusterAgreement {
                        homogeneity: get("homogeneity")?,
                        completeness: get("completeness")?,
                        v_measure: get("v_measure")?,
                        adjusted_rand: get("adjusted_rand")?,
                        n_clusters: get("n_clusters")? as usize,
                        n_noise: get("n_noise")? as usize,
                    },
                    silhouette: m.get("silhouette").copied(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(ExperimentReport {
            table1: t1.into_values().collect(),
            table2,
            metadata,
        })
    }
}
