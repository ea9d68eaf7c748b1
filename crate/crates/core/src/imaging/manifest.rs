use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{CropBox, VisualClass};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "id,relative_path,label,variant";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Clean,
    Attacked,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Attacked => "attacked",
        }
    }

    /// `1` for attacked, the positive class of every detector.
    pub fn as_target(self) -> u8 {
        match self {
            Label::Clean => 0,
            Label::Attacked => 1,
        }
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clean" => Ok(Label::Clean),
            "attacked" => Ok(Label::Attacked),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Original,
    CroppedV1,
    CroppedV2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Original, Variant::CroppedV1, Variant::CroppedV2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::CroppedV1 => "cropped_v1",
            Variant::CroppedV2 => "cropped_v2",
        }
    }

    /// Crop applied to an original-geometry image to obtain this variant.
    pub fn crop_box(self, width: usize, height: usize) -> CropBox {
        match self {
            Variant::Original => CropBox::full(width, height),
            Variant::CroppedV1 => CropBox::V1,
            Variant::CroppedV2 => CropBox::V2,
        }
    }

    pub fn id_suffix(self) -> &'static str {
        match self {
            Variant::Original => "",
            Variant::CroppedV1 => "_v1",
            Variant::CroppedV2 => "_v2",
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "original" => Ok(Variant::Original),
            "cropped_v1" => Ok(Variant::CroppedV1),
            "cropped_v2" => Ok(Variant::CroppedV2),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the directory holding the manifest file.
    pub path: PathBuf,
    pub label: Label,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn of_variant(&self, variant: Variant) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.variant == variant)
            .collect()
    }

    /// Manifest restricted to one variant, same root and seed.
    pub fn filter_variant(&self, variant: Variant) -> CorpusManifest {
        CorpusManifest {
            root: self.root.clone(),
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .filter(|e| e.variant == variant)
                .cloned()
                .collect(),
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label.as_target()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# seed={}\n{MANIFEST_HEADER}\n", self.seed);
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.id,
                e.path.to_string_lossy().replace('\\', "/"),
                e.label,
                e.variant
            ));
        }
        out
    }
}

pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Invariant(format!(
                "duplicate manifest id `{}`",
                e.id
            )));
        }
        if e.id.contains(',') || e.path.to_string_lossy().contains(',') {
            return Err(Error::Invariant(format!(
                "comma in manifest entry `{}`",
                e.id
            )));
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut seed = 0;
    let mut header_seen = false;
    let mut ids = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("seed=") {
                seed = v
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad seed `{v}`")))?;
            }
            continue;
        }
        if !header_seen {
            if line != MANIFEST_HEADER {
                return Err(parse_err(
                    line_no,
                    format!("expected header `{MANIFEST_HEADER}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line_no, "empty id".into()));
        }
        if !ids.insert(id.clone()) {
            return Err(parse_err(line_no, format!("duplicate id `{id}`")));
        }
        let label = fields[2].parse().map_err(|m| parse_err(line_no, m))?;
        let variant = fields[3].parse().map_err(|m| parse_err(line_no, m))?;
        let rel = PathBuf::from(fields[1]);
        if !root.join(&rel).is_file() {
            return Err(Error::Resolution(format!(
                "{}:{line_no}: image `{}` for id `{id}` not found",
                path.display(),
                rel.display()
            )));
        }
        entries.push(ManifestEntry {
            id,
            path: rel,
            label,
            variant,
        });
    }
    if !header_seen {
        return Err(parse_err(1, "missing header line".into()));
    }
    Ok(CorpusManifest {
        root,
        seed,
        entries,
    })
}

pub const CLASSES_HEADER: &str = "id,class";

pub fn save_visual_classes(classes: &BTreeMap<String, VisualClass>, path: &Path) -> Result<()> {
    let mut out = format!("{CLASSES_HEADER}\n");
    for (id, c) in classes {
        out.push_str(&format!("{id},{}\n", c.as_str()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the second-layer ground truth (`ok` / `defect`) per base image id.
pub fn load_visual_classes(path: &Path) -> Result<BTreeMap<String, VisualClass>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != CLASSES_HEADER {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("expected header `{CLASSES_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (id, class) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `id,class`".into(),
        })?;
        let class = class.parse().map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.insert(id.to_string(), class);
    }
    Ok(out)
}
