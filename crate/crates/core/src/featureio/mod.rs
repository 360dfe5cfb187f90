//! On-disk feature sets and fitted-model exports.
//!
//! A feature set is a directory holding `meta.json`, one FMX matrix file per
//! layer and one LBL label file. FMX and LBL are little-endian binary formats
//! with a four-byte magic and `u32` sizes; see [`binary`].

mod binary;
pub mod model;
pub mod scores;
mod split;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use binary::{decode_fmx, decode_lbl, encode_fmx, encode_lbl, FMX_MAGIC, LBL_MAGIC};
pub use split::{split_in_out, split_indices, SplitIndices, SplitSpec, Splits, OUT_SIDE_KEY};

pub const META_FILE: &str = "meta.json";
pub const DEFAULT_LABEL_FILE: &str = "labels.lbl";

#[derive(Debug, thiserror::Error)]
pub enum FeatureIoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: bad magic at offset 0: expected {expected:?}, found {found:?}", path.display())]
    Magic {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{}: file is {actual} bytes but its header implies {expected} (offset {offset})", path.display())]
    Length {
        path: PathBuf,
        offset: u64,
        expected: u64,
        actual: u64,
    },
    #[error("{}: {field} is {found} in the binary header (offset {offset}) but {expected} in meta.json", path.display())]
    HeaderMismatch {
        path: PathBuf,
        field: &'static str,
        offset: u64,
        expected: u64,
        found: u64,
    },
    #[error("{}: non-finite value {value} at offset {offset}", path.display())]
    NonFinite {
        path: PathBuf,
        offset: u64,
        value: f32,
    },
    #[error("{}: label out of range: {label} at offset {offset} (num_classes = {num_classes})", path.display())]
    LabelOutOfRange {
        path: PathBuf,
        offset: u64,
        label: i64,
        num_classes: u32,
    },
    #[error("{}: malformed JSON: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{}: malformed CSV: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("invalid feature data: {0}")]
    Invalid(String),
    #[error("insufficient samples: {side} side has {available}, split needs more than {required}")]
    InsufficientSamples {
        side: &'static str,
        available: usize,
        required: usize,
    },
}

impl FeatureIoError {
    /// True for content that parsed but violates an invariant, as opposed
    /// to unreadable or corrupt input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::LabelOutOfRange { .. } | Self::Invalid(_) | Self::InsufficientSamples { .. }
        )
    }

    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = FeatureIoError> = std::result::Result<T, E>;

/// Row-major matrix of 32-bit features, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dims: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dims: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dims == 0 {
            return Err(FeatureIoError::Invalid(format!(
                "feature matrix must be non-empty, got {rows}x{dims}"
            )));
        }
        if values.len() != rows * dims {
            return Err(FeatureIoError::Invalid(format!(
                "{rows}x{dims} matrix given {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureIoError::Invalid(format!(
                "non-finite value {} at row {}, column {}",
                values[i],
                i / dims,
                i % dims
            )));
        }
        Ok(Self { rows, dims, values })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dims = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * dims);
        for r in rows {
            if r.as_ref().len() != dims {
                return Err(FeatureIoError::Invalid("ragged rows".into()));
            }
            values.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), dims, values)
    }

    /// Rounds 64-bit rows to storage precision.
    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let rows32: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&v| v as f32).collect())
            .collect();
        Self::from_rows(&rows32)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dims)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(idx.len() * self.dims);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.dims, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub file: String,
    pub matrix: FeatureMatrix,
}

/// Per-layer features for one dataset, with class labels.
///
/// Out-of-distribution sets carry `is_ood = true` and all-zero labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dataset: String,
    num_classes: u32,
    is_ood: bool,
    label_file: String,
    labels: Vec<u32>,
    layers: Vec<Layer>,
}

impl FeatureSet {
    /// In-distribution set with default file names.
    pub fn new(
        dataset: impl Into<String>,
        num_classes: u32,
        labels: Vec<u32>,
        layers: Vec<(String, FeatureMatrix)>,
    ) -> Result<Self> {
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(i, (name, matrix))| Layer {
                file: default_layer_file(i, &name),
                name,
                matrix,
            })
            .collect();
        Self::from_parts(
            dataset.into(),
            num_classes,
            false,
            DEFAULT_LABEL_FILE.to_string(),
            labels,
            layers,
        )
    }

    /// Out-of-distribution set: labels are all zero.
    pub fn new_ood(
        dataset: impl Into<String>,
        num_classes: u32,
        layers: Vec<(String, FeatureMatrix)>,
    ) -> Result<Self> {
        let n = layers.first().map_or(0, |(_, m)| m.rows());
        let mut set = Self::new(dataset, num_classes, vec![0; n], layers)?;
        set.is_ood = true;
        Ok(set)
    }

    /// Full constructor, validating every invariant.
    pub fn from_parts(
        dataset: String,
        num_classes: u32,
        is_ood: bool,
        label_file: String,
        labels: Vec<u32>,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let set = Self {
            dataset,
            num_classes,
            is_ood,
            label_file,
            labels,
            layers,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(FeatureIoError::Invalid(m));
        if self.layers.is_empty() {
            return invalid("a feature set needs at least one layer".into());
        }
        if self.num_classes == 0 {
            return invalid("num_classes must be at least 1".into());
        }
        check_file_name(&self.label_file)?;
        let n = self.labels.len();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.name.is_empty() {
                return invalid(format!("layer {i} has an empty name"));
            }
            check_file_name(&layer.file)?;
            if layer.matrix.rows() != n {
                return invalid(format!(
                    "layer {:?} has {} rows but there are {n} labels",
                    layer.name,
                    layer.matrix.rows()
                ));
            }
            if self.layers[..i].iter().any(|l| l.name == layer.name) {
                return invalid(format!("duplicate layer name {:?}", layer.name));
            }
            if self.layers[..i].iter().any(|l| l.file == layer.file)
                || layer.file == self.label_file
            {
                return invalid(format!("duplicate file name {:?}", layer.file));
            }
        }
        if let Some(i) = self.labels.iter().position(|&l| l >= self.num_classes) {
            return Err(FeatureIoError::LabelOutOfRange {
                path: PathBuf::from(&self.label_file),
                offset: 8 + 4 * i as u64,
                label: i64::from(self.labels[i]),
                num_classes: self.num_classes,
            });
        }
        if self.is_ood && self.labels.iter().any(|&l| l != 0) {
            return invalid("out-of-distribution sets must carry all-zero labels".into());
        }
        Ok(())
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn is_ood(&self) -> bool {
        self.is_ood
    }

    pub fn label_file(&self) -> &str {
        &self.label_file
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&FeatureMatrix> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| &l.matrix)
    }

    /// Subset of samples, keeping metadata and file names.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    name: l.name.clone(),
                    file: l.file.clone(),
                    matrix: l.matrix.select_rows(idx)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(
            self.dataset.clone(),
            self.num_classes,
            self.is_ood,
            self.label_file.clone(),
            idx.iter().map(|&i| self.labels[i]).collect(),
            layers,
        )
    }
}

fn default_layer_file(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:02}_{clean}.fmx")
}

fn check_file_name(name: &str) -> Result<()> {
    if name.is_empty()
        || name == "."
        || name == ".."
        || name.contains(['/', '\\'])
        || name == META_FILE
    {
        return Err(FeatureIoError::Invalid(format!(
            "{name:?} is not a valid file name inside a feature directory"
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    dataset: String,
    num_classes: u32,
    is_ood: bool,
    label_file: String,
    layers: Vec<MetaLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaLayer {
    name: String,
    dim: u32,
    file: String,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FeatureIoError::io(path, e))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| FeatureIoError::Invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| FeatureIoError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FeatureIoError::io(path, e))
}

pub fn read_feature_set(dir: impl AsRef<Path>) -> Result<FeatureSet> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta: Meta =
        serde_json::from_slice(&read_bytes(&meta_path)?).map_err(|e| FeatureIoError::Json {
            path: meta_path.clone(),
            message: e.to_string(),
        })?;
    if meta.layers.is_empty() {
        return Err(FeatureIoError::Invalid(format!(
            "{}: no layers listed",
            meta_path.display()
        )));
    }
    check_file_name(&meta.label_file)?;

    let label_path = dir.join(&meta.label_file);
    let raw_labels = decode_lbl(&read_bytes(&label_path)?, &label_path)?;
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, &l) in raw_labels.iter().enumerate() {
        if l < 0 || l as u32 >= meta.num_classes {
            return Err(FeatureIoError::LabelOutOfRange {
                path: label_path,
                offset: 8 + 4 * i as u64,
                label: i64::from(l),
                num_classes: meta.num_classes,
            });
        }
        labels.push(l as u32);
    }

    let mut layers = Vec::with_capacity(meta.layers.len());
    for ml in &meta.layers {
        check_file_name(&ml.file)?;
        let path = dir.join(&ml.file);
        let matrix = decode_fmx(&read_bytes(&path)?, &path)?;
        if matrix.dims() as u64 != u64::from(ml.dim) {
            return Err(FeatureIoError::HeaderMismatch {
                path,
                field: "dims",
                offset: 8,
                expected: u64::from(ml.dim),
                found: matrix.dims() as u64,
            });
        }
        if matrix.rows() != labels.len() {
            return Err(FeatureIoError::HeaderMismatch {
                path,
                field: "rows",
                offset: 4,
                expected: labels.len() as u64,
                found: matrix.rows() as u64,
            });
        }
        layers.push(Layer {
            name: ml.name.clone(),
            file: ml.file.clone(),
            matrix,
        });
    }

    FeatureSet::from_parts(
        meta.dataset,
        meta.num_classes,
        meta.is_ood,
        meta.label_file,
        labels,
        layers,
    )
}

pub fn write_feature_set(set: &FeatureSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| FeatureIoError::io(dir, e))?;
    let labels: Vec<i32> = set.labels.iter().map(|&l| l as i32).collect();
    write_atomic(&dir.join(&set.label_file), &encode_lbl(&labels))?;
    for layer in &set.layers {
        write_atomic(&dir.join(&layer.file), &encode_fmx(&layer.matrix))?;
    }
    let meta = Meta {
        dataset: set.dataset.clone(),
        num_classes: set.num_classes,
        is_ood: set.is_ood,
        label_file: set.label_file.clone(),
        layers: set
            .layers
            .iter()
            .map(|l| MetaLayer {
                name: l.name.clone(),
                dim: l.matrix.dims() as u32,
                file: l.file.clone(),
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    json.push(b'\n');
    // meta.json last: a directory with meta.json is complete.
    write_atomic(&dir.join(META_FILE), &json)
}
