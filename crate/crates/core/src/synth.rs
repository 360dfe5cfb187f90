//! Deterministic synthetic feature sets.
//!
//! In-distribution samples are Gaussian clusters in a hidden orthonormal
//! basis: the first `head_k` directions have large variances and carry all
//! class signal, the remaining `d - head_k` share one small variance.
//! Anomalies sit at the centroid of the class means (no class signal) with
//! their standard deviation inflated per direction group, so a detector can
//! only find them through the tail directions unless `head_inflation > 1`.
//!
//! Every sample is drawn from its own [`stream`] keyed by sample index, so
//! output is independent of generation order.

use serde::{Deserialize, Serialize};

use crate::estimator::GaussianModel;
use crate::featureio::{FeatureIoError, FeatureMatrix, FeatureSet};
use crate::linalg::{dot, orthonormalize_rows, Matrix};
use crate::rng::{stream, SplitMix64};
use crate::scorer::{ScoreBatch, ScoreError};

/// Layer name used for every generated set.
pub const LAYER: &str = "synthetic";

const DOMAIN_BASIS: u64 = 1;
const DOMAIN_MEANS: u64 = 2;
const DOMAIN_IN: u64 = 3;
const DOMAIN_OUT: u64 = 4;
const DOMAIN_FIXTURE: u64 = 5;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("in-distribution standard deviation of component {component} is zero")]
    Degenerate { component: usize },
    #[error(transparent)]
    FeatureIo(#[from] FeatureIoError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub d: usize,
    pub classes: usize,
    pub n_per_class: usize,
    pub head_k: usize,
    /// Descending, one per head direction.
    pub head_variances: Vec<f64>,
    pub tail_variance: f64,
    pub class_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.head_k == 0 || self.head_k >= self.d {
            return bad(format!(
                "need 1 <= head_k < d, got head_k={} d={}",
                self.head_k, self.d
            ));
        }
        if self.classes == 0 || self.classes > u32::MAX as usize {
            return bad(format!("classes must be at least 1, got {}", self.classes));
        }
        if self.head_variances.len() != self.head_k {
            return bad(format!(
                "{} head variances for head_k={}",
                self.head_variances.len(),
                self.head_k
            ));
        }
        if !self
            .head_variances
            .iter()
            .chain([&self.tail_variance])
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return bad("variances must be positive and finite".into());
        }
        if self.head_variances.windows(2).any(|w| w[1] > w[0]) {
            return bad("head variances must be descending".into());
        }
        if !(self.class_separation >= 0.0) || !self.class_separation.is_finite() {
            return bad(format!(
                "class_separation must be >= 0, got {}",
                self.class_separation
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub base: SynthSpec,
    pub tail_inflation: f64,
    pub head_inflation: f64,
    pub n: usize,
    pub seed: u64,
}

impl AnomalySpec {
    pub fn new(base: SynthSpec, tail_inflation: f64, n: usize, seed: u64) -> Self {
        Self {
            base,
            tail_inflation,
            head_inflation: 1.0,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.tail_inflation > 1.0) || !self.tail_inflation.is_finite() {
            return Err(SynthError::InvalidSpec(format!(
                "tail_inflation must be > 1, got {}",
                self.tail_inflation
            )));
        }
        if !(self.head_inflation >= 1.0) || !self.head_inflation.is_finite() {
            return Err(SynthError::InvalidSpec(format!(
                "head_inflation must be >= 1, got {}",
                self.head_inflation
            )));
        }
        if self.n == 0 {
            return Err(SynthError::InvalidSpec("n must be at least 1".into()));
        }
        Ok(())
    }
}

/// The hidden construction behind a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Orthonormal directions, one per row; the first `head_k` are the head.
    pub basis: Matrix,
    /// Variance along each basis direction.
    pub variances: Vec<f64>,
    /// Class means in basis coordinates (zero outside the head).
    pub latent_means: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Class means in feature coordinates.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        self.latent_means
            .iter()
            .map(|m| self.to_features(m))
            .collect()
    }

    fn to_features(&self, latent: &[f64]) -> Vec<f64> {
        let d = self.basis.cols();
        let mut x = vec![0.0; d];
        for (b, &z) in self.basis.iter_rows().zip(latent) {
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += z * bi;
            }
        }
        x
    }
}

/// A spec together with its basis and class means.
#[derive(Debug, Clone)]
pub struct SynthModel {
    spec: SynthSpec,
    truth: GroundTruth,
}

impl SynthModel {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.d;
        let basis = (0u64..)
            .find_map(|attempt| {
                let mut rng = stream(spec.seed, DOMAIN_BASIS, attempt);
                let g = Matrix::from_vec(d, d, (0..d * d).map(|_| rng.next_normal()).collect());
                orthonormalize_rows(&g)
            })
            .expect("a Gaussian matrix is eventually full rank");
        let latent_means = (0..spec.classes)
            .map(|c| {
                let mut rng = stream(spec.seed, DOMAIN_MEANS, c as u64);
                let mut v: Vec<f64> = (0..spec.head_k).map(|_| rng.next_normal()).collect();
                let norm = dot(&v, &v).sqrt();
                v.iter_mut()
                    .for_each(|x| *x *= spec.class_separation / norm);
                v.resize(d, 0.0);
                v
            })
            .collect();
        let mut variances = spec.head_variances.clone();
        variances.resize(d, spec.tail_variance);
        Ok(Self {
            truth: GroundTruth {
                basis,
                variances,
                latent_means,
            },
            spec,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    fn draw(&self, center: &[f64], stds: &[f64], rng: &mut SplitMix64) -> Vec<f64> {
        let latent: Vec<f64> = center
            .iter()
            .zip(stds)
            .map(|(m, s)| m + s * rng.next_normal())
            .collect();
        self.truth.to_features(&latent)
    }

    /// `n_per_class` samples per class; sample `i` has label `i % classes`.
    pub fn sample_in(&self, n_per_class: usize, sample_seed: u64) -> Result<FeatureSet> {
        let c = self.spec.classes;
        let stds: Vec<f64> = self.truth.variances.iter().map(|v| v.sqrt()).collect();
        let n = n_per_class * c;
        let mut values = Vec::with_capacity(n * self.spec.d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % c;
            let mut rng = stream(sample_seed, DOMAIN_IN, i as u64);
            values.extend(
                self.draw(&self.truth.latent_means[label], &stds, &mut rng)
                    .into_iter()
                    .map(|v| v as f32),
            );
            labels.push(label as u32);
        }
        let m = FeatureMatrix::new(n, self.spec.d, values)?;
        Ok(FeatureSet::new(
            "synthetic",
            c as u32,
            labels,
            vec![(LAYER.to_string(), m)],
        )?)
    }

    /// Anomalies at the class-mean centroid with inflated spread.
    pub fn sample_anomalies(
        &self,
        tail_inflation: f64,
        head_inflation: f64,
        n: usize,
        seed: u64,
    ) -> Result<FeatureSet> {
        let d = self.spec.d;
        let k = self.spec.head_k;
        let mut centroid = vec![0.0; d];
        for m in &self.truth.latent_means {
            centroid
                .iter_mut()
                .zip(m)
                .for_each(|(a, b)| *a += b / self.spec.classes as f64);
        }
        let stds: Vec<f64> = self
            .truth
            .variances
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.sqrt()
                    * if j < k {
                        head_inflation
                    } else {
                        tail_inflation
                    }
            })
            .collect();
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            let mut rng = stream(seed, DOMAIN_OUT, i as u64);
            values.extend(
                self.draw(&centroid, &stds, &mut rng)
                    .into_iter()
                    .map(|v| v as f32),
            );
        }
        let m = FeatureMatrix::new(n, d, values)?;
        Ok(FeatureSet::new_ood(
            "synthetic-anomalies",
            self.spec.classes as u32,
            vec![(LAYER.to_string(), m)],
        )?)
    }
}

/// Samples `spec.n_per_class` per class under `spec.seed`.
pub fn gen_in_distribution(spec: &SynthSpec) -> Result<(FeatureSet, GroundTruth)> {
    let model = SynthModel::new(spec.clone())?;
    let set = model.sample_in(spec.n_per_class, spec.seed)?;
    Ok((set, model.truth))
}

pub fn gen_anomalies(spec: &AnomalySpec) -> Result<FeatureSet> {
    spec.validate()?;
    SynthModel::new(spec.base.clone())?.sample_anomalies(
        spec.tail_inflation,
        spec.head_inflation,
        spec.n,
        spec.seed,
    )
}

/// Population standard deviation of `other`'s PC scores over `in_set`'s,
/// per fitted component.
///
/// Multi-class models center each sample on its nearest class mean (full
/// Mahalanobis distance); single-mean models on that mean.
pub fn normalized_std_profile(
    in_set: &FeatureMatrix,
    other: &FeatureMatrix,
    model: &dyn GaussianModel,
) -> Result<Vec<f64>> {
    let d = model.dim();
    for m in [in_set, other] {
        if m.dims() != d {
            return Err(SynthError::DimensionMismatch {
                expected: d,
                found: m.dims(),
            });
        }
    }
    let s_in = component_stds(in_set, model);
    let s_other = component_stds(other, model);
    s_in.iter()
        .zip(&s_other)
        .enumerate()
        .map(|(i, (a, b))| {
            if *a > 0.0 {
                Ok(b / a)
            } else {
                Err(SynthError::Degenerate { component: i + 1 })
            }
        })
        .collect()
}

fn component_stds(set: &FeatureMatrix, model: &dyn GaussianModel) -> Vec<f64> {
    let spectrum = model.spectrum();
    let d = model.dim();
    let inv_lambda: Vec<f64> = spectrum.eigenvalues().iter().map(|l| 1.0 / l).collect();
    let projected_means: Vec<Vec<f64>> =
        model.means().iter().map(|m| spectrum.project(m)).collect();
    let n = set.rows() as f64;
    let mut ys = Matrix::zeros(set.rows(), d);
    for (i, x) in set.iter_rows().enumerate() {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let c = if projected_means.len() == 1 {
            0
        } else {
            let ux = spectrum.project(&x);
            let mut best = (0, f64::INFINITY);
            for (c, um) in projected_means.iter().enumerate() {
                let d2: f64 = ux
                    .iter()
                    .zip(um)
                    .zip(&inv_lambda)
                    .map(|((a, b), w)| (a - b) * (a - b) * w)
                    .sum();
                if d2 < best.1 {
                    best = (c, d2);
                }
            }
            best.0
        };
        let centered: Vec<f64> = x
            .iter()
            .zip(&model.means()[c])
            .map(|(a, b)| a - b)
            .collect();
        ys.row_mut(i).copy_from_slice(&spectrum.project(&centered));
    }
    (0..d)
        .map(|j| {
            let mean = (0..set.rows()).map(|i| ys[(i, j)]).sum::<f64>() / n;
            ((0..set.rows())
                .map(|i| (ys[(i, j)] - mean).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        })
        .collect()
}

/// Mean shift between unit-variance normals that yields the given AUROC:
/// `sqrt(2) * Phi^-1(auroc)`.
pub fn shift_for_auroc(auroc: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let phi = Normal::standard();
    std::f64::consts::SQRT_2 * phi.inverse_cdf(auroc)
}

/// Scores for the two-feature ensemble fixture.
#[derive(Debug, Clone)]
pub struct TwoFeatureFixture {
    pub in_scores: Vec<ScoreBatch>,
    pub out_scores: Vec<ScoreBatch>,
}

/// Two independent score features named `a` and `b`, each with population
/// AUROC `auroc`: in-distribution scores are `N(shift, 1)`, anomalies
/// `N(0, 1)`.
pub fn two_feature_fixture(
    n_in: usize,
    n_out: usize,
    auroc: f64,
    seed: u64,
) -> Result<TwoFeatureFixture> {
    if !(auroc > 0.0 && auroc < 1.0) {
        return Err(SynthError::InvalidSpec(format!(
            "auroc must be in (0, 1), got {auroc}"
        )));
    }
    let shift = shift_for_auroc(auroc);
    let side = |n: usize, shift: f64, offset: u64| -> Result<Vec<ScoreBatch>> {
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = stream(seed, DOMAIN_FIXTURE, offset + i as u64);
            a.push(shift + rng.next_normal());
            b.push(shift + rng.next_normal());
        }
        Ok(vec![ScoreBatch::new("a", a)?, ScoreBatch::new("b", b)?])
    };
    Ok(TwoFeatureFixture {
        in_scores: side(n_in, shift, 0)?,
        out_scores: side(n_out, 0.0, 1 << 40)?,
    })
}
