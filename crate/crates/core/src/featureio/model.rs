//! `model.json`: fitted Gaussian models, one entry per layer.
//!
//! Every float is written in scientific notation with 17 significant digits
//! (`{:.16e}`), so import reproduces the fitted values bit-for-bit.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, FeatureIoError, Result};
use crate::estimator::{ConditionalGaussian, GaussianModel, MarginalGaussian, Spectrum};
use crate::linalg::Matrix;

pub const MODEL_FORMAT: &str = "maha-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Conditional,
    Marginal,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Conditional => "conditional",
            Self::Marginal => "marginal",
        })
    }
}

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Conditional(ConditionalGaussian),
    Marginal(MarginalGaussian),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Conditional(_) => ModelKind::Conditional,
            Self::Marginal(_) => ModelKind::Marginal,
        }
    }

    pub fn as_gaussian(&self) -> &dyn GaussianModel {
        match self {
            Self::Conditional(m) => m,
            Self::Marginal(m) => m,
        }
    }

    /// Training-set mean: the marginal mean, or the prior-weighted class means.
    pub fn global_mean(&self) -> Vec<f64> {
        match self {
            Self::Conditional(m) => m.global_mean(),
            Self::Marginal(m) => m.mean().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    pub name: String,
    pub model: FittedModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub floor_scale: f64,
    pub layers: Vec<LayerModel>,
}

impl ModelFile {
    pub fn layer(&self, name: &str) -> Option<&FittedModel> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| &l.model)
    }
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    format: String,
    kind: ModelKind,
    floor_scale: f64,
    layers: Vec<RawLayer>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    name: String,
    dim: usize,
    num_classes: usize,
    class_counts: Vec<usize>,
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<Vec<f64>>,
    floor: f64,
    floor_hits: usize,
}

/// JSON formatter writing floats with 17 significant digits.
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

fn to_raw(layer: &LayerModel) -> RawLayer {
    let g = layer.model.as_gaussian();
    let s = g.spectrum();
    let (counts, priors) = match &layer.model {
        FittedModel::Conditional(m) => (m.class_counts().to_vec(), m.priors().to_vec()),
        FittedModel::Marginal(m) => (vec![m.n_samples()], vec![1.0]),
    };
    RawLayer {
        name: layer.name.clone(),
        dim: g.dim(),
        num_classes: g.means().len(),
        class_counts: counts,
        priors,
        means: g.means().to_vec(),
        covariance: g.covariance().to_rows(),
        eigenvalues: s.eigenvalues().to_vec(),
        eigenvectors: s.eigenvectors().to_rows(),
        floor: s.floor(),
        floor_hits: s.floor_hits(),
    }
}

fn square(rows: Vec<Vec<f64>>, d: usize, what: &str) -> std::result::Result<Matrix, String> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(format!("{what} must be {d}x{d}"));
    }
    Ok(Matrix::from_rows(&rows))
}

fn from_raw(kind: ModelKind, raw: RawLayer) -> std::result::Result<LayerModel, String> {
    let d = raw.dim;
    let covariance = square(raw.covariance, d, "covariance")?;
    let eigenvectors = square(raw.eigenvectors, d, "eigenvectors")?;
    let spectrum = Spectrum::from_parts(raw.eigenvalues, eigenvectors, raw.floor)
        .map_err(|e| e.to_string())?;
    if spectrum.floor_hits() != raw.floor_hits {
        return Err(format!(
            "floor_hits is {} but {} eigenvalues sit on the floor",
            raw.floor_hits,
            spectrum.floor_hits()
        ));
    }
    let model = match kind {
        ModelKind::Conditional => FittedModel::Conditional(
            ConditionalGaussian::from_parts(
                raw.means,
                covariance,
                raw.priors,
                raw.class_counts,
                spectrum,
            )
            .map_err(|e| e.to_string())?,
        ),
        ModelKind::Marginal => {
            let [mean]: [Vec<f64>; 1] = raw
                .means
                .try_into()
                .map_err(|_| "a marginal model has exactly one mean".to_string())?;
            let n = raw.class_counts.first().copied().unwrap_or(0);
            FittedModel::Marginal(
                MarginalGaussian::from_parts(mean, covariance, n, spectrum)
                    .map_err(|e| e.to_string())?,
            )
        }
    };
    if model.as_gaussian().means().len() != raw.num_classes {
        return Err("num_classes does not match the means".into());
    }
    Ok(LayerModel {
        name: raw.name,
        model,
    })
}

pub fn encode_model(file: &ModelFile) -> Vec<u8> {
    let raw = RawFile {
        format: MODEL_FORMAT.to_string(),
        kind: file.kind,
        floor_scale: file.floor_scale,
        layers: file.layers.iter().map(to_raw).collect(),
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SeventeenDigits);
    raw.serialize(&mut ser).expect("model serializes");
    out.push(b'\n');
    out
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelFile> {
    let json_err = |message: String| FeatureIoError::Json {
        path: path.to_path_buf(),
        message,
    };
    let raw: RawFile = serde_json::from_slice(bytes).map_err(|e| json_err(e.to_string()))?;
    if raw.format != MODEL_FORMAT {
        return Err(json_err(format!(
            "unsupported model format {:?}",
            raw.format
        )));
    }
    if raw.layers.is_empty() {
        return Err(json_err("model has no layers".into()));
    }
    let kind = raw.kind;
    let layers = raw
        .layers
        .into_iter()
        .map(|l| {
            let name = l.name.clone();
            from_raw(kind, l).map_err(|m| json_err(format!("layer {name:?}: {m}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if layers.iter().any(|l| l.model.kind() != kind) {
        return Err(json_err("layer kind mismatch".into()));
    }
    Ok(ModelFile {
        kind,
        floor_scale: raw.floor_scale,
        layers,
    })
}

pub fn write_model(file: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(file))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| FeatureIoError::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit_conditional, fit_marginal, DEFAULT_FLOOR_SCALE};
    use crate::featureio::FeatureMatrix;
    use crate::rng::SplitMix64;

    fn features(seed: u64) -> FeatureMatrix {
        let mut rng = SplitMix64::new(seed);
        FeatureMatrix::new(
            30,
            4,
            (0..120).map(|_| rng.next_normal() as f32 * 7.3).collect(),
        )
        .unwrap()
    }

    #[test]
    fn conditional_round_trip_is_exact() {
        let x = features(1);
        let labels: Vec<u32> = (0..30).map(|i| i % 3).collect();
        let m = fit_conditional(&x, &labels, 3, DEFAULT_FLOOR_SCALE).unwrap();
        let file = ModelFile {
            kind: ModelKind::Conditional,
            floor_scale: DEFAULT_FLOOR_SCALE,
            layers: vec![LayerModel {
                name: "penultimate".into(),
                model: FittedModel::Conditional(m),
            }],
        };
        let bytes = encode_model(&file);
        let back = decode_model(&bytes, Path::new("m.json")).unwrap();
        assert_eq!(back, file);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn marginal_round_trip_and_digits() {
        let m = fit_marginal(&features(2), DEFAULT_FLOOR_SCALE).unwrap();
        let file = ModelFile {
            kind: ModelKind::Marginal,
            floor_scale: DEFAULT_FLOOR_SCALE,
            layers: vec![LayerModel {
                name: "f".into(),
                model: FittedModel::Marginal(m),
            }],
        };
        let bytes = encode_model(&file);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(
            text.contains("\"floor_scale\":1.0000000000000000e-10"),
            "{}",
            &text[..200]
        );
        let back = decode_model(&bytes, Path::new("m.json")).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn seventeen_digit_floats_parse_exactly() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..2000 {
            let v = f64::from_bits(rng.next_u64());
            if !v.is_finite() {
                continue;
            }
            let s = format!("{v:.16e}");
            let parsed: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn rejects_foreign_format() {
        let err = decode_model(
            br#"{"format":"x","kind":"marginal","floor_scale":1e-10,"layers":[]}"#,
            Path::new("m"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("unsupported model format"));
    }
}
