//! Confidence scores on fitted Gaussian models.
//!
//! Every score is oriented so that higher means more in-distribution:
//! distances are returned negated. Mahalanobis distances are evaluated in
//! the eigenbasis, `(x - mu)^T Sigma^-1 (x - mu) = sum_i y_i^2 / lambda_i`
//! with `y = U (x - mu)`, which also gives the partial distance over a
//! subset `S` of components by restricting the sum.

use std::fmt;

use crate::estimator::{ConditionalGaussian, GaussianModel, MarginalGaussian, Spectrum};
use crate::featureio::FeatureMatrix;
use crate::linalg::{dot, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("dimension mismatch: model has d = {expected}, batch has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid component selection: {0}")]
    InvalidSelection(String),
    #[error("score {name:?} is non-finite at sample {index}")]
    NonFinite { name: String, index: usize },
    #[error("no class means given")]
    NoMeans,
}

pub type Result<T, E = ScoreError> = std::result::Result<T, E>;

/// Named per-sample scores, higher = more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    name: String,
    values: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScoreError::NonFinite { name, index });
        }
        Ok(Self { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A subset of principal components, 1-based in descending-eigenvalue order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSelection {
    indices: Vec<usize>,
}

impl ComponentSelection {
    /// Sorts and deduplicates; rejects empty sets and index 0.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(ScoreError::InvalidSelection("selection is empty".into()));
        }
        if indices[0] == 0 {
            return Err(ScoreError::InvalidSelection(
                "component indices are 1-based".into(),
            ));
        }
        Ok(Self { indices })
    }

    /// Inclusive range `first..=last`.
    pub fn range(first: usize, last: usize) -> Result<Self> {
        if first > last {
            return Err(ScoreError::InvalidSelection(format!(
                "empty range {first}-{last}"
            )));
        }
        Self::new((first..=last).collect())
    }

    pub fn all(d: usize) -> Result<Self> {
        Self::range(1, d)
    }

    /// Parses `A-B[,C-D...]`; a bare `A` means `A-A`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut indices = Vec::new();
        for part in spec.split(',') {
            let part = part.trim();
            let bad =
                || ScoreError::InvalidSelection(format!("cannot parse component range {part:?}"));
            let (a, b) = match part.split_once('-') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (part, part),
            };
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            indices.extend(a..=b);
        }
        Self::new(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_index(&self) -> usize {
        *self.indices.last().unwrap()
    }

    pub fn validate_for(&self, d: usize) -> Result<()> {
        if self.max_index() > d {
            return Err(ScoreError::InvalidSelection(format!(
                "component {} exceeds dimension {d}",
                self.max_index()
            )));
        }
        Ok(())
    }

    /// Components in `1..=d` not selected; `None` when that set is empty.
    pub fn complement(&self, d: usize) -> Option<Self> {
        let rest: Vec<usize> = (1..=d)
            .filter(|i| self.indices.binary_search(i).is_err())
            .collect();
        Self::new(rest).ok()
    }

    /// 0-based positions, for indexing eigenvalue arrays.
    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().map(|i| i - 1)
    }
}

impl fmt::Display for ComponentSelection {
    /// Contiguous runs as `P(a-b,c-d)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("P(")?;
        let mut first = true;
        let mut i = 0;
        while i < self.indices.len() {
            let start = self.indices[i];
            let mut end = start;
            while i + 1 < self.indices.len() && self.indices[i + 1] == end + 1 {
                i += 1;
                end += 1;
            }
            if !first {
                f.write_str(",")?;
            }
            first = false;
            if start == end {
                write!(f, "{start}")?;
            } else {
                write!(f, "{start}-{end}")?;
            }
            i += 1;
        }
        f.write_str(")")
    }
}

/// Which mean a sample is centered on before projecting.
#[derive(Debug, Clone, Copy)]
pub enum Center<'a> {
    /// One fixed mean, e.g. the marginal mean.
    Mean(&'a [f64]),
    /// The nearest of several class means. Partial scores pick it by the
    /// full Mahalanobis distance, the Euclidean score by Euclidean distance.
    NearestClass(&'a [Vec<f64>]),
}

impl<'a> Center<'a> {
    /// Single-mean models center on their mean, multi-class ones on the
    /// nearest class mean.
    pub fn of<M: GaussianModel + ?Sized>(model: &'a M) -> Self {
        match model.means() {
            [m] => Center::Mean(m),
            ms => Center::NearestClass(ms),
        }
    }
}

/// Per-sample principal-component scores, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PCScores {
    values: Matrix,
}

impl PCScores {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Scores of a conditional model plus the class each sample was closest to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalScores {
    pub scores: ScoreBatch,
    pub classes: Vec<usize>,
}

fn check_dims(expected: usize, batch: &FeatureMatrix) -> Result<()> {
    if batch.dims() != expected {
        return Err(ScoreError::DimensionMismatch {
            expected,
            found: batch.dims(),
        });
    }
    Ok(())
}

fn check_mean(expected: usize, mean: &[f64]) -> Result<()> {
    if mean.len() != expected {
        return Err(ScoreError::DimensionMismatch {
            expected,
            found: mean.len(),
        });
    }
    Ok(())
}

/// Precomputed projections for nearest-mean search in the eigenbasis.
struct Whitener<'a> {
    spectrum: &'a Spectrum,
    inv_lambda: Vec<f64>,
    projected_means: Vec<Vec<f64>>,
}

impl<'a> Whitener<'a> {
    fn new(spectrum: &'a Spectrum, means: &[Vec<f64>]) -> Self {
        Self {
            spectrum,
            inv_lambda: spectrum.eigenvalues().iter().map(|l| 1.0 / l).collect(),
            projected_means: means.iter().map(|m| spectrum.project(m)).collect(),
        }
    }

    /// Index of the mean with the smallest full Mahalanobis distance.
    /// Ties go to the lower index.
    fn nearest(&self, ux: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, um) in self.projected_means.iter().enumerate() {
            let d2: f64 = ux
                .iter()
                .zip(um)
                .zip(&self.inv_lambda)
                .map(|((a, b), w)| (a - b) * (a - b) * w)
                .sum();
            if d2 < best.1 {
                best = (c, d2);
            }
        }
        best.0
    }

    /// `y = U (x - mu)`, subtracting before projecting.
    fn centered_projection(&self, x: &[f64], mu: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        self.spectrum.project(&centered)
    }

    fn distance(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.inv_lambda).map(|(v, w)| v * v * w).sum()
    }
}

/// Conditional (tied covariance) score: `max_c -(x - mu_c)^T Sigma^-1 (x - mu_c)`.
pub fn conditional_score(
    model: &ConditionalGaussian,
    batch: &FeatureMatrix,
) -> Result<ConditionalScores> {
    check_dims(model.dim(), batch)?;
    let w = Whitener::new(model.spectrum(), model.means());
    let mut values = Vec::with_capacity(batch.rows());
    let mut classes = Vec::with_capacity(batch.rows());
    for i in 0..batch.rows() {
        let x = batch.row_f64(i);
        let c = w.nearest(&model.spectrum().project(&x));
        let y = w.centered_projection(&x, &model.means()[c]);
        values.push(-w.distance(&y));
        classes.push(c);
    }
    Ok(ConditionalScores {
        scores: ScoreBatch::new("conditional", values)?,
        classes,
    })
}

/// Marginal score: `-(x - mu)^T Sigma^-1 (x - mu)` around the global mean.
pub fn marginal_score(model: &MarginalGaussian, batch: &FeatureMatrix) -> Result<ScoreBatch> {
    check_dims(model.dim(), batch)?;
    let w = Whitener::new(model.spectrum(), &[]);
    let values = (0..batch.rows())
        .map(|i| -w.distance(&w.centered_projection(&batch.row_f64(i), model.mean())))
        .collect();
    ScoreBatch::new("marginal", values)
}

/// `y_i = u_i^T (x - center)` for every component, descending eigenvalue order.
pub fn pc_scores(spectrum: &Spectrum, center: &[f64], batch: &FeatureMatrix) -> Result<PCScores> {
    let d = spectrum.dim();
    check_dims(d, batch)?;
    check_mean(d, center)?;
    let mut values = Matrix::zeros(batch.rows(), d);
    let mut centered = vec![0.0; d];
    for i in 0..batch.rows() {
        for ((c, &x), &m) in centered.iter_mut().zip(batch.row(i)).zip(center) {
            *c = f64::from(x) - m;
        }
        let out = values.row_mut(i);
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(spectrum.component(k), &centered);
        }
    }
    Ok(PCScores { values })
}

/// Partial Mahalanobis score `-sum_{i in S} y_i^2 / lambda_i`.
///
/// With [`Center::NearestClass`], the class is chosen by the full
/// Mahalanobis distance over all components before the restricted sum.
pub fn partial_score(
    spectrum: &Spectrum,
    center: Center<'_>,
    selection: &ComponentSelection,
    batch: &FeatureMatrix,
) -> Result<ScoreBatch> {
    let d = spectrum.dim();
    check_dims(d, batch)?;
    selection.validate_for(d)?;
    let picked: Vec<usize> = selection.zero_based().collect();
    let inv: Vec<f64> = picked
        .iter()
        .map(|&k| 1.0 / spectrum.eigenvalues()[k])
        .collect();

    let restricted = |x: &[f64], mu: &[f64]| -> f64 {
        let centered: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        picked
            .iter()
            .zip(&inv)
            .map(|(&k, w)| {
                let y = dot(spectrum.component(k), &centered);
                y * y * w
            })
            .sum()
    };

    let values = match center {
        Center::Mean(mu) => {
            check_mean(d, mu)?;
            (0..batch.rows())
                .map(|i| -restricted(&batch.row_f64(i), mu))
                .collect()
        }
        Center::NearestClass(means) => {
            if means.is_empty() {
                return Err(ScoreError::NoMeans);
            }
            for m in means {
                check_mean(d, m)?;
            }
            let w = Whitener::new(spectrum, means);
            (0..batch.rows())
                .map(|i| {
                    let x = batch.row_f64(i);
                    let c = w.nearest(&spectrum.project(&x));
                    -restricted(&x, &means[c])
                })
                .collect()
        }
    };
    ScoreBatch::new(selection.to_string(), values)
}

/// `-||x - mu||^2`; with several means, the Euclidean-nearest one.
pub fn euclidean_score(center: Center<'_>, batch: &FeatureMatrix) -> Result<ScoreBatch> {
    let sq = |x: &[f32], mu: &[f64]| -> f64 {
        x.iter()
            .zip(mu)
            .map(|(&a, b)| {
                let t = f64::from(a) - b;
                t * t
            })
            .sum()
    };
    let values = match center {
        Center::Mean(mu) => {
            check_dims(mu.len(), batch)?;
            batch.iter_rows().map(|x| -sq(x, mu)).collect()
        }
        Center::NearestClass(means) => {
            let first = means.first().ok_or(ScoreError::NoMeans)?;
            for m in means {
                check_mean(first.len(), m)?;
            }
            check_dims(first.len(), batch)?;
            batch
                .iter_rows()
                .map(|x| -means.iter().map(|m| sq(x, m)).fold(f64::INFINITY, f64::min))
                .collect()
        }
    };
    ScoreBatch::new("euclidean", values)
}

/// Posterior `P(t = c | x)` of the generative classifier with tied
/// covariance: a softmax over `mu_c^T Sigma^-1 x - mu_c^T Sigma^-1 mu_c / 2 + log beta_c`.
///
/// Rows are samples, columns classes.
pub fn induced_posterior(model: &ConditionalGaussian, batch: &FeatureMatrix) -> Result<Matrix> {
    check_dims(model.dim(), batch)?;
    let s = model.spectrum();
    // Sigma^-1 mu_c = U^T diag(1/lambda) U mu_c
    let weights: Vec<Vec<f64>> = model
        .means()
        .iter()
        .map(|m| {
            let scaled: Vec<f64> = s
                .project(m)
                .iter()
                .zip(s.eigenvalues())
                .map(|(y, l)| y / l)
                .collect();
            s.eigenvectors().transpose().mul_vec(&scaled)
        })
        .collect();
    let biases: Vec<f64> = weights
        .iter()
        .zip(model.means())
        .zip(model.priors())
        .map(|((w, m), p)| -0.5 * dot(w, m) + p.ln())
        .collect();
    let c = model.num_classes();
    let mut out = Matrix::zeros(batch.rows(), c);
    for i in 0..batch.rows() {
        let x = batch.row_f64(i);
        let row = out.row_mut(i);
        for k in 0..c {
            row[k] = dot(&weights[k], &x) + biases[k];
        }
        softmax_in_place(row);
    }
    Ok(out)
}

/// Max-subtracted softmax.
pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    z.iter_mut().for_each(|v| *v /= total);
}
