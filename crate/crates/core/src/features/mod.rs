//! The three feature families: windowed SSIM against a white reference,
//! 256-bin gray-level histograms, and image embeddings.

mod embedding;
mod histogram;
mod ssim;

pub use embedding::{average_pool, fallback_embedding, EmbeddingParams, Projector};
pub use histogram::histogram_features;
pub use ssim::{ssim_features, ssim_map, SsimParams};

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{load_png, white_reference, CorpusManifest, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Embeddings,
    Ssim,
    Histogram,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Embeddings, Family::Ssim, Family::Histogram];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Embeddings => "embeddings",
            Family::Ssim => "ssim",
            Family::Histogram => "histogram",
        }
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embeddings" | "embedding" => Ok(Family::Embeddings),
            "ssim" => Ok(Family::Ssim),
            "histogram" | "histograms" => Ok(Family::Histogram),
            other => Err(Error::Config(format!("unknown feature family `{other}`"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureParams {
    pub ssim: SsimParams,
    pub embedding: EmbeddingParams,
}

/// Named-column design matrix, one row per image in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub family: Family,
    pub ids: Vec<String>,
    pub column_names: Vec<String>,
    /// Row-major.
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(
        family: Family,
        ids: Vec<String>,
        column_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != ids.len() * column_names.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                ids.len(),
                column_names.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite feature at row {}",
                i / column_names.len().max(1)
            )));
        }
        Ok(FeatureMatrix {
            family,
            ids,
            column_names,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols().max(1))
    }

    /// Converts into the row-major matrix type used by the detectors.
    pub fn to_matrix(&self) -> crate::detectors::Matrix {
        crate::detectors::Matrix::new(self.n_rows(), self.n_cols(), self.values.clone())
            .expect("shape checked at construction")
    }

    /// Text form: a `# family=...` comment line, a header, then one row per image.
    pub fn to_text(&self, meta: &str) -> String {
        let mut out = format!("# family={}", self.family);
        if !meta.is_empty() {
            out.push(' ');
            out.push_str(meta);
        }
        out.push('\n');
        out.push_str("id");
        for c in &self.column_names {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(self.rows()) {
            out.push_str(id);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, meta: &str) -> Result<()> {
        fs::write(path, self.to_text(meta)).map_err(|e| Error::io(path, e))
    }

    /// Reads a persisted matrix and the `key=value` pairs of its comment line.
    pub fn load(path: &Path) -> Result<(Self, HashMap<String, String>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let meta: HashMap<String, String> = first
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "missing `# family=` line".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let family: Family = meta
            .get("family")
            .ok_or_else(|| parse_err(1, "missing family tag".into()))?
            .parse()?;
        let rows = parse_table(
            lines,
            parse_err,
            parse_err,
        )?;
        Ok((
            FeatureMatrix::new(family, rows.ids, rows.columns, rows.values)?,
            meta,
        ))
    }
}

struct Table {
    ids: Vec<String>,
    columns: Vec<String>,
    values: Vec<f64>,
}

/// `id,c0,c1,...` header plus decimal rows. `row_err` receives the data row index.
fn parse_table<'a>(
    mut lines: impl Iterator<Item = (usize, &'a str)>,
    line_err: impl Fn(usize, String) -> Error,
    row_err: impl Fn(usize, String) -> Error,
) -> Result<Table> {
    let (hi, header) = lines
        .find(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .ok_or_else(|| line_err(1, "missing header".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("id") {
        return Err(line_err(hi + 1, "header must start with `id`".into()));
    }
    let columns: Vec<String> = cols.map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row, (_, line)) in lines.filter(|(_, l)| !l.trim().is_empty()).enumerate() {
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default().to_string();
        let mut count = 0;
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| row_err(row, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(row_err(row, format!("non-finite value `{f}` for `{id}`")));
            }
            values.push(v);
            count += 1;
        }
        if count != columns.len() {
            return Err(row_err(
                row,
                format!("expected {} values, found {count}", columns.len()),
            ));
        }
        ids.push(id);
    }
    Ok(Table {
        ids,
        columns,
        values,
    })
}

/// Loads externally computed embeddings and orders them by the manifest.
pub fn ingest_embeddings(path: &Path, manifest: &CorpusManifest) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = parse_table(
        text.lines().enumerate(),
        |line, message| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
        |row, message| Error::Ingestion { row, message },
    )?;
    if table.ids.len() != manifest.entries.len() {
        return Err(Error::Ingestion {
            row: table.ids.len().min(manifest.entries.len()),
            message: format!(
                "file has {} rows, manifest has {} entries",
                table.ids.len(),
                manifest.entries.len()
            ),
        });
    }
    let width = table.columns.len();
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for (row, id) in table.ids.iter().enumerate() {
        if by_id.insert(id.as_str(), row).is_some() {
            return Err(Error::Ingestion {
                row,
                message: format!("duplicate id `{id}`"),
            });
        }
    }
    let mut values = Vec::with_capacity(table.values.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let row = *by_id.get(e.id.as_str()).ok_or_else(|| Error::Ingestion {
            row: i,
            message: format!("no embedding for manifest id `{}`", e.id),
        })?;
        values.extend_from_slice(&table.values[row * width..(row + 1) * width]);
    }
    FeatureMatrix::new(
        Family::Embeddings,
        manifest.entries.iter().map(|e| e.id.clone()).collect(),
        table.columns,
        values,
    )
}

/// Extracts one family from images that share a geometry.
pub fn extract(
    family: Family,
    ids: Vec<String>,
    images: &[GrayImage],
    params: &FeatureParams,
) -> Result<FeatureMatrix> {
    let Some(first) = images.first() else {
        let names = match family {
            Family::Histogram => histogram::column_names(),
            Family::Embeddings => embedding::column_names(params.embedding.dim),
            Family::Ssim => Vec::new(),
        };
        return FeatureMatrix::new(family, ids, names, Vec::new());
    };
    if let Some(bad) = images.iter().find(|i| !i.same_shape(first)) {
        return Err(Error::Dimension(format!(
            "mixed image sizes: {}x{} and {}x{}",
            first.width(),
            first.height(),
            bad.width(),
            bad.height()
        )));
    }
    let (names, rows): (Vec<String>, Vec<Vec<f64>>) = match family {
        Family::Histogram => (
            histogram::column_names(),
            images.par_iter().map(histogram_features).collect(),
        ),
        Family::Ssim => {
            let p = &params.ssim;
            let white = white_reference(first.width(), first.height())?;
            (
                p.column_names(first.width(), first.height())?,
                images
                    .par_iter()
                    .map(|img| ssim_features(img, &white, p))
                    .collect::<Result<_>>()?,
            )
        }
        Family::Embeddings => {
            let e = &params.embedding;
            let proj = Projector::for_image(first, e.dim, e.seed)?;
            (
                embedding::column_names(e.dim),
                images
                    .par_iter()
                    .map(|img| proj.embed(img))
                    .collect::<Result<_>>()?,
            )
        }
    };
    FeatureMatrix::new(family, ids, names, rows.concat())
}

/// Loads every image of `manifest` and extracts `family`.
pub fn build_feature_matrix(
    manifest: &CorpusManifest,
    family: Family,
    params: &FeatureParams,
) -> Result<FeatureMatrix> {
    let images: Vec<GrayImage> = manifest
        .entries
        .par_iter()
        .map(|e| load_png(&manifest.resolve(e)))
        .collect::<Result<_>>()?;
    let ids = manifest.entries.iter().map(|e| e.id.clone()).collect();
    extract(family, ids, &images, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{save_png, Label, ManifestEntry, Variant};
    use std::path::PathBuf;

    fn manifest_with(dir: &Path, sizes: &[(usize, usize)]) -> CorpusManifest {
        let mut entries = Vec::new();
        for (i, &(w, h)) in sizes.iter().enumerate() {
            let id = format!("img_{i:03}");
            let img = GrayImage::from_fn(w, h, |x, y| ((x + y + i) % 200) as f64 / 255.0).unwrap();
            let rel = PathBuf::from(format!("{id}.png"));
            save_png(&img, &dir.join(&rel)).unwrap();
            entries.push(ManifestEntry {
                id,
                path: rel,
                label: if i % 2 == 0 {
                    Label::Clean
                } else {
                    Label::Attacked
                },
                variant: Variant::CroppedV1,
            });
        }
        CorpusManifest {
            root: dir.to_path_buf(),
            seed: 0,
            entries,
        }
    }

    #[test]
    fn histogram_matrix_shape() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(16, 16); 20]);
        let fm = build_feature_matrix(&m, Family::Histogram, &FeatureParams::default()).unwrap();
        assert_eq!((fm.n_rows(), fm.n_cols()), (20, 256));
        assert_eq!(fm.ids[3], "img_003");
    }

    #[test]
    fn ssim_matrix_on_cropped_v1_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(40, 369); 2]);
        let fm = build_feature_matrix(&m, Family::Ssim, &FeatureParams::default()).unwrap();
        assert_eq!(fm.n_cols(), 231);
        assert_eq!(fm.column_names[0], "ssim_y0_x0");
        assert_eq!(fm.column_names[230], "ssim_mean");
    }

    #[test]
    fn mixed_sizes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(16, 16), (16, 24)]);
        assert!(matches!(
            build_feature_matrix(&m, Family::Ssim, &FeatureParams::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn unknown_family() {
        assert!(matches!("colour".parse::<Family>(), Err(Error::Config(_))));
    }

    #[test]
    fn persisted_matrix_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(16, 16); 3]);
        let params = FeatureParams {
            embedding: EmbeddingParams {
                dim: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let fm = build_feature_matrix(&m, Family::Embeddings, &params).unwrap();
        let path = dir.path().join("f.csv");
        fm.save(&path, "variant=cropped_v1 config=abc").unwrap();
        let (back, meta) = FeatureMatrix::load(&path).unwrap();
        assert_eq!(back, fm);
        assert_eq!(meta["config"], "abc");
    }

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("emb.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn ingest_reorders_by_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(8, 8); 3]);
        let p = write(
            dir.path(),
            "id,e0,e1\nimg_002,5,6\nimg_000,1,2\nimg_001,3,4\n",
        );
        let fm = ingest_embeddings(&p, &m).unwrap();
        assert_eq!(fm.n_rows(), 3);
        assert_eq!(fm.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn ingest_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(8, 8); 3]);
        let p = write(dir.path(), "id,e0\nimg_000,1\nimg_001,2\n");
        assert!(matches!(
            ingest_embeddings(&p, &m),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn ingest_nan_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(8, 8); 3]);
        let p = write(dir.path(), "id,e0\nimg_000,1\nimg_001,NaN\nimg_002,3\n");
        match ingest_embeddings(&p, &m) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_unknown_id() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(8, 8); 2]);
        let p = write(dir.path(), "id,e0\nimg_000,1\nimg_077,2\n");
        assert!(matches!(
            ingest_embeddings(&p, &m),
            Err(Error::Ingestion { row: 1, .. })
        ));
    }

    #[test]
    fn extraction_is_bit_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(dir.path(), &[(24, 24); 4]);
        for fam in Family::ALL {
            let a = build_feature_matrix(&m, fam, &FeatureParams::default()).unwrap();
            let b = build_feature_matrix(&m, fam, &FeatureParams::default()).unwrap();
            assert_eq!(a, b);
        }
    }
}
