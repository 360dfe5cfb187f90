//! Logistic-regression models over confidence scores and PC subspaces.
//!
//! - [`train_detector`]: binary logistic regression (label 1 =
//!   in-distribution) over per-layer scores, optionally with an ODIN score
//!   as one more column. Damped Newton with backtracking.
//! - [`train_probe`]: multinomial logistic regression on principal-component
//!   scores restricted to a [`ComponentSelection`], centered on the global
//!   mean. L-BFGS with backtracking.
//! - [`select_hyperparameters`]: picks the best precomputed candidate on
//!   validation data.
//!
//! Inputs are standardized with population statistics before the linear
//! map. The objective is the summed negative log-likelihood plus
//! `l2 / 2 * ||w||^2` (biases unpenalized), divided by the sample count so
//! that the gradient tolerance does not depend on n. Every accepted step
//! strictly decreases the objective.

use serde::{Deserialize, Serialize};

use crate::estimator::Spectrum;
use crate::featureio::FeatureMatrix;
use crate::linalg::{cholesky_solve, dot, Matrix};
use crate::metrics::{self, MetricsError};
use crate::rng::SplitMix64;
use crate::scorer::{softmax_in_place, ComponentSelection, ScoreBatch, ScoreError};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("missing feature {0:?}")]
    MissingFeature(String),
    #[error("need at least {needed} samples per side, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: usize },
    #[error("no candidates to select from")]
    NoCandidates,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = EnsembleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2_strength: f64,
    pub max_iterations: usize,
    /// Stop once the infinity norm of the per-sample gradient is at most this.
    pub tolerance: f64,
    /// Random initial weights from this seed; zeros when `None`.
    pub init_seed: Option<u64>,
    /// L-BFGS history length (multinomial training only).
    pub memory: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_strength: 1.0,
            max_iterations: 1000,
            tolerance: 1e-8,
            init_seed: None,
            memory: 10,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.l2_strength >= 0.0) || !self.l2_strength.is_finite() {
            return Err(EnsembleError::Config(format!(
                "l2_strength must be >= 0, got {}",
                self.l2_strength
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(EnsembleError::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.memory == 0 {
            return Err(EnsembleError::Config("memory must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the final gradient.
    pub gradient_norm: f64,
    /// Objective before the first step and after every accepted step.
    pub loss_history: Vec<f64>,
    /// Zero-variance features left out of the fit.
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    /// Population statistics; zero variance yields `None`.
    fn fit<'a>(values: impl Iterator<Item = f64> + Clone) -> (Self, bool) {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var > 0.0 && var.is_finite() {
            (
                Self {
                    mean,
                    std: var.sqrt(),
                },
                true,
            )
        } else {
            (Self { mean, std: 1.0 }, false)
        }
    }
}

/// Binary detector over named score features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardization: Vec<Standardization>,
}

impl EnsembleModel {
    /// Pre-sigmoid output for one already-ordered feature row.
    pub fn logit(&self, raw: &[f64]) -> f64 {
        self.bias
            + raw
                .iter()
                .zip(&self.standardization)
                .zip(&self.weights)
                .map(|((&v, s), w)| w * s.apply(v))
                .sum::<f64>()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_features(
    in_features: &[ScoreBatch],
    out_features: &[ScoreBatch],
) -> Result<(usize, usize)> {
    if in_features.is_empty() {
        return Err(EnsembleError::FeatureMismatch("no features given".into()));
    }
    if in_features.len() != out_features.len() {
        return Err(EnsembleError::FeatureMismatch(format!(
            "{} in-distribution features vs {} out-of-distribution",
            in_features.len(),
            out_features.len()
        )));
    }
    for (a, b) in in_features.iter().zip(out_features) {
        if a.name() != b.name() {
            return Err(EnsembleError::FeatureMismatch(format!(
                "{:?} vs {:?}",
                a.name(),
                b.name()
            )));
        }
    }
    for (i, f) in in_features.iter().enumerate() {
        if in_features[..i].iter().any(|g| g.name() == f.name()) {
            return Err(EnsembleError::FeatureMismatch(format!(
                "duplicate feature {:?}",
                f.name()
            )));
        }
    }
    let side_len = |side: &[ScoreBatch], what: &str| -> Result<usize> {
        let n = side[0].len();
        if side.iter().any(|f| f.len() != n) {
            return Err(EnsembleError::FeatureMismatch(format!(
                "{what} features differ in length"
            )));
        }
        Ok(n)
    };
    let n_in = side_len(in_features, "in-distribution")?;
    let n_out = side_len(out_features, "out-of-distribution")?;
    if n_in.min(n_out) < 2 {
        return Err(EnsembleError::TooFewSamples {
            needed: 2,
            got: n_in.min(n_out),
        });
    }
    Ok((n_in, n_out))
}

/// Fits the in-vs-out detector. Label 1 is in-distribution.
pub fn train_detector(
    in_features: &[ScoreBatch],
    out_features: &[ScoreBatch],
    config: &TrainConfig,
) -> Result<(EnsembleModel, TrainReport)> {
    config.validate()?;
    let (n_in, n_out) = check_features(in_features, out_features)?;
    let p = in_features.len();
    let n = n_in + n_out;

    let mut standardization = Vec::with_capacity(p);
    let mut active = Vec::with_capacity(p);
    let mut excluded = Vec::new();
    for (a, b) in in_features.iter().zip(out_features) {
        let (s, ok) = Standardization::fit(a.values().iter().chain(b.values()).copied());
        standardization.push(s);
        if ok {
            active.push(standardization.len() - 1);
        } else {
            log::warn!(
                "feature {:?} has zero variance; excluded with weight 0",
                a.name()
            );
            excluded.push(a.name().to_string());
        }
    }

    // Design matrix over active features, followed by the label.
    let k = active.len();
    let mut x = Matrix::zeros(n, k);
    let mut y = vec![0.0; n];
    for (row, (side, label, offset)) in [(in_features, 1.0, 0), (out_features, 0.0, n_in)]
        .into_iter()
        .flat_map(|(side, label, offset)| {
            (0..side[0].len()).map(move |i| (i, (side, label, offset)))
        })
        .map(|(i, (side, label, offset))| (i + offset, (side, label, i)))
    {
        for (c, &f) in active.iter().enumerate() {
            x[(row, c)] = standardization[f].apply(side[f].values()[offset]);
        }
        y[row] = label;
    }

    let mut theta = vec![0.0; k + 1];
    if let Some(seed) = config.init_seed {
        let mut rng = SplitMix64::new(seed);
        theta.iter_mut().for_each(|t| *t = rng.next_normal());
    }
    let report = newton_logistic(&x, &y, &mut theta, config, excluded);

    let mut weights = vec![0.0; p];
    for (c, &f) in active.iter().enumerate() {
        weights[f] = theta[c];
    }
    let model = EnsembleModel {
        feature_names: in_features.iter().map(|f| f.name().to_string()).collect(),
        weights,
        bias: theta[k],
        standardization,
    };
    if !report.converged {
        log::warn!(
            "detector training stopped after {} iterations with gradient norm {:e}",
            report.iterations,
            report.gradient_norm
        );
    }
    Ok((model, report))
}

fn binary_objective(x: &Matrix, y: &[f64], theta: &[f64], l2: f64) -> f64 {
    let k = x.cols();
    let (w, b) = theta.split_at(k);
    let nll: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, &t)| {
            let z = dot(r, w) + b[0];
            softplus(z) - t * z
        })
        .sum();
    (nll + 0.5 * l2 * dot(w, w)) / x.rows() as f64
}

fn newton_logistic(
    x: &Matrix,
    y: &[f64],
    theta: &mut [f64],
    config: &TrainConfig,
    excluded: Vec<String>,
) -> TrainReport {
    let k = x.cols();
    let dim = k + 1;
    let l2 = config.l2_strength;
    let mut loss = binary_objective(x, y, theta, l2);
    let mut history = vec![loss];
    let mut iterations = 0;
    loop {
        let mut grad = vec![0.0; dim];
        let mut hess = Matrix::zeros(dim, dim);
        let mut aug = vec![0.0; dim];
        for (r, &t) in x.iter_rows().zip(y) {
            aug[..k].copy_from_slice(r);
            aug[k] = 1.0;
            let prob = sigmoid(dot(&aug, theta));
            let resid = prob - t;
            let curv = prob * (1.0 - prob);
            for i in 0..dim {
                grad[i] += resid * aug[i];
                for j in 0..=i {
                    hess[(i, j)] += curv * aug[i] * aug[j];
                }
            }
        }
        for i in 0..k {
            grad[i] += l2 * theta[i];
            hess[(i, i)] += l2;
        }
        let inv_n = 1.0 / x.rows() as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
        for i in 0..dim {
            for j in 0..=i {
                hess[(i, j)] *= inv_n;
                hess[(j, i)] = hess[(i, j)];
            }
        }
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= config.tolerance || iterations == config.max_iterations {
            return TrainReport {
                iterations,
                converged: gnorm <= config.tolerance,
                gradient_norm: gnorm,
                loss_history: history,
                excluded,
            };
        }

        let mut step = None;
        let mut ridge = 0.0;
        for _ in 0..20 {
            if let Some(s) = cholesky_solve(&hess, &grad) {
                step = Some(s);
                break;
            }
            ridge = if ridge == 0.0 {
                1e-10 * hess.trace().max(1.0)
            } else {
                ridge * 100.0
            };
            for i in 0..dim {
                hess[(i, i)] += ridge;
            }
        }
        let step = step.unwrap_or_else(|| grad.clone());
        let slope = dot(&grad, &step);

        let mut t = 1.0;
        let mut accepted = false;
        let mut trial = theta.to_vec();
        for _ in 0..60 {
            for ((tr, &th), &s) in trial.iter_mut().zip(theta.iter()).zip(&step) {
                *tr = th - t * s;
            }
            let next = binary_objective(x, y, &trial, l2);
            if next <= loss - 1e-4 * t * slope {
                accepted = next < loss;
                if accepted {
                    theta.copy_from_slice(&trial);
                    loss = next;
                }
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No decrease is representable any more.
            return TrainReport {
                iterations,
                converged: false,
                gradient_norm: gnorm,
                loss_history: history,
                excluded,
            };
        }
        history.push(loss);
    }
}

/// Pre-sigmoid detector output; higher = more in-distribution.
pub fn detector_score(model: &EnsembleModel, features: &[ScoreBatch]) -> Result<ScoreBatch> {
    let cols: Vec<&ScoreBatch> = model
        .feature_names
        .iter()
        .map(|name| {
            features
                .iter()
                .find(|f| f.name() == name)
                .ok_or_else(|| EnsembleError::MissingFeature(name.clone()))
        })
        .collect::<Result<_>>()?;
    let n = cols[0].len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(EnsembleError::FeatureMismatch(
            "features differ in length".into(),
        ));
    }
    let mut raw = vec![0.0; cols.len()];
    let values = (0..n)
        .map(|i| {
            for (r, c) in raw.iter_mut().zip(&cols) {
                *r = c.values()[i];
            }
            model.logit(&raw)
        })
        .collect();
    Ok(ScoreBatch::new("ensemble", values)?)
}

/// Multinomial logistic regression on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// One row per class.
    pub class_weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub standardization: Vec<Standardization>,
}

impl SoftmaxModel {
    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn logits(&self, raw: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = raw
            .iter()
            .zip(&self.standardization)
            .map(|(&v, s)| s.apply(v))
            .collect();
        self.class_weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, &z) + b)
            .collect()
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, raw: &[f64]) -> usize {
        let z = self.logits(raw);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }
}

fn softmax_objective(
    x: &Matrix,
    labels: &[u32],
    c: usize,
    theta: &[f64],
    grad: &mut [f64],
    l2: f64,
) -> f64 {
    let k = x.cols();
    let (w, b) = theta.split_at(c * k);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut z = vec![0.0; c];
    for (r, &t) in x.iter_rows().zip(labels) {
        for j in 0..c {
            z[j] = dot(&w[j * k..(j + 1) * k], r) + b[j];
        }
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[t as usize];
        softmax_in_place(&mut z);
        z[t as usize] -= 1.0;
        for j in 0..c {
            let resid = z[j];
            let gw = &mut grad[j * k..(j + 1) * k];
            for (g, &v) in gw.iter_mut().zip(r) {
                *g += resid * v;
            }
            grad[c * k + j] += resid;
        }
    }
    for i in 0..c * k {
        loss += 0.5 * l2 * theta[i] * theta[i];
        grad[i] += l2 * theta[i];
    }
    let inv_n = 1.0 / x.rows() as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    loss * inv_n
}

/// Limited-memory BFGS with Armijo backtracking.
fn lbfgs(
    mut objective: impl FnMut(&[f64], &mut [f64]) -> f64,
    theta: &mut [f64],
    config: &TrainConfig,
) -> TrainReport {
    let dim = theta.len();
    let mut grad = vec![0.0; dim];
    let mut loss = objective(theta, &mut grad);
    let mut history = vec![loss];
    let mut memory: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut iterations = 0;
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];

    loop {
        let gnorm = inf_norm(&grad);
        if gnorm <= config.tolerance || iterations == config.max_iterations {
            return TrainReport {
                iterations,
                converged: gnorm <= config.tolerance,
                gradient_norm: gnorm,
                loss_history: history,
                excluded: Vec::new(),
            };
        }

        // Two-loop recursion: direction = -H grad.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = match memory.last() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &q);
            q.iter_mut()
                .zip(s)
                .for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let mut slope = dot(&grad, &q);
        if !(slope > 0.0) {
            memory.clear();
            q.copy_from_slice(&grad);
            slope = dot(&grad, &q);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for ((tr, &th), &d) in trial.iter_mut().zip(theta.iter()).zip(&q) {
                *tr = th - t * d;
            }
            let next = objective(&trial, &mut trial_grad);
            if next <= loss - 1e-4 * t * slope {
                // Armijo can hold with no change once the decrease is below
                // rounding; that is a stall, not progress.
                accepted = (next < loss).then_some(next);
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some(next) = accepted else {
            if memory.is_empty() {
                return TrainReport {
                    iterations,
                    converged: false,
                    gradient_norm: gnorm,
                    loss_history: history,
                    excluded: Vec::new(),
                };
            }
            memory.clear();
            continue;
        };
        let s: Vec<f64> = trial.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        theta.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        loss = next;
        history.push(loss);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if memory.len() == config.memory {
                memory.remove(0);
            }
            memory.push((s, y, 1.0 / sy));
        }
    }
}

/// Multinomial logistic regression on arbitrary `inputs` (rows = samples).
pub fn train_softmax(
    inputs: &Matrix,
    labels: &[u32],
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(SoftmaxModel, TrainReport)> {
    config.validate()?;
    let (n, k) = (inputs.rows(), inputs.cols());
    if labels.len() != n {
        return Err(EnsembleError::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if n < 2 {
        return Err(EnsembleError::TooFewSamples { needed: 2, got: n });
    }
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(EnsembleError::LabelOutOfRange { label, num_classes });
    }
    let c = num_classes;
    let mut standardization = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    for j in 0..k {
        let (s, ok) = Standardization::fit((0..n).map(|i| inputs[(i, j)]));
        if !ok {
            excluded.push(format!("input {j}"));
        }
        standardization.push(s);
    }
    let mut z = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            // Zero-variance inputs standardize to 0 and drop out.
            z[(i, j)] = standardization[j].apply(inputs[(i, j)]);
        }
    }
    let mut theta = vec![0.0; c * k + c];
    if let Some(seed) = config.init_seed {
        let mut rng = SplitMix64::new(seed);
        theta.iter_mut().for_each(|t| *t = 0.1 * rng.next_normal());
    }
    let l2 = config.l2_strength;
    let mut report = lbfgs(
        |th, g| softmax_objective(&z, labels, c, th, g, l2),
        &mut theta,
        config,
    );
    report.excluded = excluded;
    if !report.converged {
        log::warn!(
            "softmax training stopped after {} iterations with gradient norm {:e}",
            report.iterations,
            report.gradient_norm
        );
    }
    let model = SoftmaxModel {
        class_weights: (0..c).map(|j| theta[j * k..(j + 1) * k].to_vec()).collect(),
        biases: theta[c * k..].to_vec(),
        standardization,
    };
    Ok((model, report))
}

/// Classifier on the principal-component scores of a subset of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// 1-based component indices.
    pub selection: Vec<usize>,
    pub center: Vec<f64>,
    /// Selected unit eigenvectors, one per row, in selection order.
    pub components: Vec<Vec<f64>>,
    pub classifier: SoftmaxModel,
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn project(&self, x: &[f32]) -> Vec<f64> {
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .map(|(&a, b)| f64::from(a) - b)
            .collect();
        self.components.iter().map(|u| dot(u, &centered)).collect()
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        if features.dims() != self.dim() {
            return Err(EnsembleError::DimensionMismatch {
                expected: self.dim(),
                found: features.dims(),
            });
        }
        Ok(features
            .iter_rows()
            .map(|x| self.classifier.predict(&self.project(x)))
            .collect())
    }
}

fn selected_projection(
    spectrum: &Spectrum,
    center: &[f64],
    selection: &ComponentSelection,
    features: &FeatureMatrix,
) -> Result<(Vec<Vec<f64>>, Matrix)> {
    let d = spectrum.dim();
    selection.validate_for(d)?;
    if features.dims() != d {
        return Err(EnsembleError::DimensionMismatch {
            expected: d,
            found: features.dims(),
        });
    }
    if center.len() != d {
        return Err(EnsembleError::DimensionMismatch {
            expected: d,
            found: center.len(),
        });
    }
    let components: Vec<Vec<f64>> = selection
        .zero_based()
        .map(|k| spectrum.component(k).to_vec())
        .collect();
    let mut y = Matrix::zeros(features.rows(), components.len());
    let mut centered = vec![0.0; d];
    for (i, x) in features.iter_rows().enumerate() {
        for ((c, &a), m) in centered.iter_mut().zip(x).zip(center) {
            *c = f64::from(a) - m;
        }
        for (j, u) in components.iter().enumerate() {
            y[(i, j)] = dot(u, &centered);
        }
    }
    Ok((components, y))
}

/// Trains a probe classifier on `y_S = U_S (x - center)`.
///
/// `center` is the global training mean: class means are not subtracted.
pub fn train_probe(
    features: &FeatureMatrix,
    labels: &[u32],
    num_classes: usize,
    spectrum: &Spectrum,
    center: &[f64],
    selection: &ComponentSelection,
    config: &TrainConfig,
) -> Result<(ProbeModel, TrainReport)> {
    let (components, y) = selected_projection(spectrum, center, selection, features)?;
    let (classifier, report) = train_softmax(&y, labels, num_classes, config)?;
    Ok((
        ProbeModel {
            selection: selection.indices().to_vec(),
            center: center.to_vec(),
            components,
            classifier,
        },
        report,
    ))
}

/// Fraction of samples whose predicted class equals the label.
pub fn probe_accuracy(model: &ProbeModel, features: &FeatureMatrix, labels: &[u32]) -> Result<f64> {
    if labels.len() != features.rows() {
        return Err(EnsembleError::DimensionMismatch {
            expected: features.rows(),
            found: labels.len(),
        });
    }
    let pred = model.predict(features)?;
    let hits = pred
        .iter()
        .zip(labels)
        .filter(|(&p, &t)| p == t as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Auroc,
    TnrAtTpr95,
}

impl SelectionMetric {
    pub fn evaluate(self, val_in: &[f64], val_out: &[f64]) -> Result<f64> {
        Ok(match self {
            Self::Auroc => metrics::auroc(val_in, val_out)?,
            Self::TnrAtTpr95 => metrics::tnr_at_tpr(val_in, val_out, 0.95)?,
        })
    }
}

/// One grid point with its validation scores already computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub epsilon: f64,
    pub temperature: Option<f64>,
    pub val_in: Vec<f64>,
    pub val_out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub epsilon: f64,
    pub temperature: Option<f64>,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterChoice {
    /// Index into the candidate list.
    pub best: usize,
    pub table: Vec<CandidateResult>,
}

/// Best validation metric wins; ties go to the smaller epsilon, then the
/// smaller temperature (no temperature counts as smallest).
pub fn select_hyperparameters(
    candidates: &[Candidate],
    metric: SelectionMetric,
) -> Result<HyperparameterChoice> {
    if candidates.is_empty() {
        return Err(EnsembleError::NoCandidates);
    }
    let table: Vec<CandidateResult> = candidates
        .iter()
        .map(|c| {
            Ok(CandidateResult {
                epsilon: c.epsilon,
                temperature: c.temperature,
                metric: metric.evaluate(&c.val_in, &c.val_out)?,
            })
        })
        .collect::<Result<_>>()?;
    let temp = |t: Option<f64>| t.unwrap_or(f64::NEG_INFINITY);
    let mut best = 0;
    for (i, r) in table.iter().enumerate().skip(1) {
        let b = &table[best];
        let better = r.metric > b.metric
            || (r.metric == b.metric
                && (r.epsilon < b.epsilon
                    || (r.epsilon == b.epsilon && temp(r.temperature) < temp(b.temperature))));
        if better {
            best = i;
        }
    }
    Ok(HyperparameterChoice { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{fit_marginal, GaussianModel, DEFAULT_FLOOR_SCALE};
    use crate::metrics::auroc;

    fn batch(name: &str, v: Vec<f64>) -> ScoreBatch {
        ScoreBatch::new(name, v).unwrap()
    }

    fn normals(n: usize, shift: f64, rng: &mut SplitMix64) -> Vec<f64> {
        (0..n).map(|_| rng.next_normal() + shift).collect()
    }

    #[test]
    fn separable_one_dimensional() {
        let (m, r) = train_detector(
            &[batch("s", vec![2.0, 3.0])],
            &[batch("s", vec![-3.0, -2.0])],
            &TrainConfig::default(),
        )
        .unwrap();
        assert!(r.converged, "{r:?}");
        assert!(m.weights[0] > 0.0);
        let s_in = detector_score(&m, &[batch("s", vec![2.0, 3.0])]).unwrap();
        let s_out = detector_score(&m, &[batch("s", vec![-3.0, -2.0])]).unwrap();
        assert!(s_in.values().iter().all(|&v| v > 0.0));
        assert!(s_out.values().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn no_signal_gives_chance_auroc() {
        let mut rng = SplitMix64::new(4);
        let tr_in = normals(500, 0.0, &mut rng);
        let tr_out = normals(500, 0.0, &mut rng);
        let (m, _) = train_detector(
            &[batch("s", tr_in)],
            &[batch("s", tr_out)],
            &TrainConfig::default(),
        )
        .unwrap();
        let v_in = detector_score(&m, &[batch("s", normals(1000, 0.0, &mut rng))]).unwrap();
        let v_out = detector_score(&m, &[batch("s", normals(1000, 0.0, &mut rng))]).unwrap();
        let a = auroc(v_in.values(), v_out.values()).unwrap();
        assert!((a - 0.5).abs() <= 0.1, "{a}");
    }

    #[test]
    fn zero_variance_feature_is_excluded() {
        let (m, r) = train_detector(
            &[batch("a", vec![1.0, 2.0, 3.0]), batch("k", vec![5.0; 3])],
            &[batch("a", vec![-1.0, 0.0, 0.5]), batch("k", vec![5.0; 3])],
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(m.weights[1], 0.0);
        assert_eq!(m.standardization[1].std, 1.0);
        assert_eq!(r.excluded, vec!["k".to_string()]);
    }

    #[test]
    fn mismatched_features_are_rejected() {
        let err = train_detector(
            &[batch("a", vec![1.0, 2.0])],
            &[batch("b", vec![1.0, 2.0])],
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EnsembleError::FeatureMismatch(_)));
        let err = train_detector(
            &[batch("a", vec![1.0])],
            &[batch("a", vec![1.0, 2.0])],
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, EnsembleError::TooFewSamples { .. }));
        let bad = TrainConfig {
            tolerance: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_detector(
                &[batch("a", vec![1.0, 2.0])],
                &[batch("a", vec![1.0, 2.0])],
                &bad
            ),
            Err(EnsembleError::Config(_))
        ));
    }

    #[test]
    fn detector_score_definitions() {
        let m = EnsembleModel {
            feature_names: vec!["s".into()],
            weights: vec![1.0],
            bias: 0.0,
            standardization: vec![Standardization {
                mean: 2.0,
                std: 4.0,
            }],
        };
        let out = detector_score(&m, &[batch("s", vec![2.0, 6.0, -2.0])]).unwrap();
        assert_eq!(out.values(), &[0.0, 1.0, -1.0]);
        let m0 = EnsembleModel {
            bias: 0.75,
            ..m.clone()
        };
        assert_eq!(
            detector_score(&m0, &[batch("s", vec![2.0])])
                .unwrap()
                .values(),
            &[0.75]
        );
        assert!(matches!(
            detector_score(&m, &[batch("t", vec![1.0])]),
            Err(EnsembleError::MissingFeature(_))
        ));
    }

    #[test]
    fn sigmoid_of_output_matches_definition() {
        let mut rng = SplitMix64::new(8);
        let fin = [
            batch("a", normals(200, 1.0, &mut rng)),
            batch("b", normals(200, 0.5, &mut rng)),
        ];
        let fout = [
            batch("a", normals(200, 0.0, &mut rng)),
            batch("b", normals(200, 0.0, &mut rng)),
        ];
        let (m, _) = train_detector(&fin, &fout, &TrainConfig::default()).unwrap();
        let out = detector_score(&m, &fin).unwrap();
        for i in 0..200 {
            let z: f64 = m.bias
                + (0..2)
                    .map(|j| {
                        m.weights[j] * (fin[j].values()[i] - m.standardization[j].mean)
                            / m.standardization[j].std
                    })
                    .sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            assert!((sigmoid(out.values()[i]) - p).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_never_increases_and_optimum_is_unique() {
        let mut rng = SplitMix64::new(19);
        let fin = [
            batch("a", normals(300, 0.8, &mut rng)),
            batch("b", normals(300, 0.3, &mut rng)),
        ];
        let fout = [
            batch("a", normals(300, 0.0, &mut rng)),
            batch("b", normals(300, 0.0, &mut rng)),
        ];
        let (m1, r1) = train_detector(&fin, &fout, &TrainConfig::default()).unwrap();
        let (m2, r2) = train_detector(
            &fin,
            &fout,
            &TrainConfig {
                init_seed: Some(77),
                ..TrainConfig::default()
            },
        )
        .unwrap();
        for r in [&r1, &r2] {
            assert!(r.converged);
            assert!(r.loss_history.windows(2).all(|w| w[1] <= w[0]));
        }
        let gap = m1
            .weights
            .iter()
            .zip(&m2.weights)
            .map(|(a, b)| (a - b).abs())
            .fold((m1.bias - m2.bias).abs(), f64::max);
        assert!(gap <= 1e-6, "{gap}");
    }

    #[test]
    fn softmax_loss_never_increases() {
        let mut rng = SplitMix64::new(3);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|i| vec![rng.next_normal() + (i % 3) as f64, rng.next_normal()])
            .collect();
        let labels: Vec<u32> = (0..300).map(|i| (i % 3) as u32).collect();
        let (_, r) = train_softmax(
            &Matrix::from_rows(&rows),
            &labels,
            3,
            &TrainConfig::default(),
        )
        .unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }

    /// Two blobs separated along one axis in d = 6, with a distinct
    /// variance per axis so the spectrum is well ordered.
    fn blobs(n_per: usize, rng: &mut SplitMix64) -> (FeatureMatrix, Vec<u32>) {
        let stds = [1.0, 3.0, 2.5, 2.0, 1.5, 0.5];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2u32 {
            for _ in 0..n_per {
                let mut x: Vec<f64> = stds.iter().map(|s| s * rng.next_normal()).collect();
                x[0] += if c == 0 { -4.0 } else { 4.0 };
                rows.push(x);
                labels.push(c);
            }
        }
        (FeatureMatrix::from_f64_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn probe_follows_the_signal() {
        let mut rng = SplitMix64::new(21);
        let (train, tl) = blobs(300, &mut rng);
        let (test, el) = blobs(300, &mut rng);
        let m = fit_marginal(&train, DEFAULT_FLOOR_SCALE).unwrap();
        // Separation along axis 0 dominates the marginal variance: PC 1.
        let cfg = TrainConfig::default();
        let head = ComponentSelection::new(vec![1]).unwrap();
        let (p, _) = train_probe(&train, &tl, 2, m.spectrum(), m.mean(), &head, &cfg).unwrap();
        let acc_head = probe_accuracy(&p, &test, &el).unwrap();
        assert!(acc_head >= 0.95, "{acc_head}");

        let bottom = ComponentSelection::range(2, 6).unwrap();
        let (p, _) = train_probe(&train, &tl, 2, m.spectrum(), m.mean(), &bottom, &cfg).unwrap();
        let acc_bottom = probe_accuracy(&p, &test, &el).unwrap();
        assert!(acc_bottom <= 0.6, "{acc_bottom}");

        let all = ComponentSelection::all(6).unwrap();
        let (p, _) = train_probe(&train, &tl, 2, m.spectrum(), m.mean(), &all, &cfg).unwrap();
        let acc_all = probe_accuracy(&p, &test, &el).unwrap();
        let raw_rows: Vec<Vec<f64>> = (0..train.rows()).map(|i| train.row_f64(i)).collect();
        let (raw, _) = train_softmax(&Matrix::from_rows(&raw_rows), &tl, 2, &cfg).unwrap();
        let raw_acc = (0..test.rows())
            .filter(|&i| raw.predict(&test.row_f64(i)) == el[i] as usize)
            .count() as f64
            / test.rows() as f64;
        assert!((acc_all - raw_acc).abs() <= 0.02, "{acc_all} vs {raw_acc}");
        assert_eq!(probe_accuracy(&p, &train, &tl).unwrap(), 1.0);
    }

    #[test]
    fn constant_probe_scores_one_over_c() {
        let x = FeatureMatrix::from_rows(&[[0.0f32], [1.0], [2.0], [3.0], [4.0], [5.0]]).unwrap();
        let labels = [0, 1, 2, 0, 1, 2];
        let model = ProbeModel {
            selection: vec![1],
            center: vec![0.0],
            components: vec![vec![1.0]],
            classifier: SoftmaxModel {
                class_weights: vec![vec![0.0]; 3],
                biases: vec![0.0; 3],
                standardization: vec![Standardization {
                    mean: 0.0,
                    std: 1.0,
                }],
            },
        };
        assert!((probe_accuracy(&model, &x, &labels).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_matches_confusion_count() {
        let mut rng = SplitMix64::new(6);
        let (train, tl) = blobs(50, &mut rng);
        let m = fit_marginal(&train, DEFAULT_FLOOR_SCALE).unwrap();
        let (p, _) = train_probe(
            &train,
            &tl,
            2,
            m.spectrum(),
            m.mean(),
            &ComponentSelection::range(1, 2).unwrap(),
            &TrainConfig::default(),
        )
        .unwrap();
        let (test, _) = blobs(50, &mut rng);
        let labels: Vec<u32> = (0..100).map(|_| rng.below(2) as u32).collect();
        let pred = p.predict(&test).unwrap();
        let mut confusion = [[0usize; 2]; 2];
        for (&t, &q) in labels.iter().zip(&pred) {
            confusion[t as usize][q] += 1;
        }
        let diag = (confusion[0][0] + confusion[1][1]) as f64 / 100.0;
        assert_eq!(probe_accuracy(&p, &test, &labels).unwrap(), diag);
    }

    #[test]
    fn probe_absorbs_per_component_scale() {
        let mut rng = SplitMix64::new(13);
        let (train, tl) = blobs(200, &mut rng);
        let (test, el) = blobs(200, &mut rng);
        let m = fit_marginal(&train, DEFAULT_FLOOR_SCALE).unwrap();
        let sel = ComponentSelection::range(1, 3).unwrap();
        let cfg = TrainConfig::default();
        let (p, _) = train_probe(&train, &tl, 2, m.spectrum(), m.mean(), &sel, &cfg).unwrap();
        let base = probe_accuracy(&p, &test, &el).unwrap();
        // Scaling u_i by s_i scales y_i by s_i.
        let scales = [0.01, 37.0, 4.5, 1.0, 1.0, 1.0];
        let mut u = m.spectrum().eigenvectors().clone();
        for (i, s) in scales.iter().enumerate() {
            u.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let scaled = m.spectrum().with_eigenvectors_unchecked(u);
        let (q, _) = train_probe(&train, &tl, 2, &scaled, m.mean(), &sel, &cfg).unwrap();
        let acc = probe_accuracy(&q, &test, &el).unwrap();
        assert!((acc - base).abs() <= 0.005, "{acc} vs {base}");
    }

    #[test]
    fn selection_rules() {
        let c = |e: f64, t: Option<f64>, a: Vec<f64>, b: Vec<f64>| Candidate {
            epsilon: e,
            temperature: t,
            val_in: a,
            val_out: b,
        };
        let only = [c(0.1, None, vec![0.0], vec![1.0])];
        assert_eq!(
            select_hyperparameters(&only, SelectionMetric::Auroc)
                .unwrap()
                .best,
            0
        );
        let two = [
            c(0.0, None, vec![0.0, 1.0], vec![0.0, 1.0]),
            c(0.2, None, vec![2.0, 3.0], vec![0.0, 1.0]),
        ];
        let choice = select_hyperparameters(&two, SelectionMetric::Auroc).unwrap();
        assert_eq!(choice.best, 1);
        assert_eq!(choice.table[0].metric, 0.5);
        assert_eq!(choice.table[1].metric, 1.0);
        let tie = [
            c(0.01, Some(100.0), vec![1.0], vec![0.0]),
            c(0.01, Some(10.0), vec![1.0], vec![0.0]),
            c(0.05, Some(1.0), vec![1.0], vec![0.0]),
        ];
        assert_eq!(
            select_hyperparameters(&tie, SelectionMetric::Auroc)
                .unwrap()
                .best,
            1
        );
        assert!(matches!(
            select_hyperparameters(&[], SelectionMetric::Auroc),
            Err(EnsembleError::NoCandidates)
        ));
    }

    #[test]
    fn selection_matches_independent_reevaluation() {
        let mut rng = SplitMix64::new(30);
        let grid = [0.0, 0.0005, 0.001, 0.0014, 0.002];
        let cands: Vec<Candidate> = grid
            .iter()
            .map(|&e| Candidate {
                epsilon: e,
                temperature: Some(1000.0),
                val_in: normals(40, 0.3 + rng.next_f64(), &mut rng),
                val_out: normals(40, 0.0, &mut rng),
            })
            .collect();
        for metric in [SelectionMetric::Auroc, SelectionMetric::TnrAtTpr95] {
            let choice = select_hyperparameters(&cands, metric).unwrap();
            // Pairwise AUROC / threshold scan, then first strict maximum.
            let evals: Vec<f64> = cands
                .iter()
                .map(|c| match metric {
                    SelectionMetric::Auroc => {
                        let mut s = 0.0;
                        for &a in &c.val_in {
                            for &b in &c.val_out {
                                s += if a > b {
                                    1.0
                                } else if a == b {
                                    0.5
                                } else {
                                    0.0
                                };
                            }
                        }
                        s / 1600.0
                    }
                    SelectionMetric::TnrAtTpr95 => {
                        let tpr =
                            |t: f64| c.val_in.iter().filter(|&&v| v >= t).count() as f64 / 40.0;
                        let tau = c
                            .val_in
                            .iter()
                            .cloned()
                            .filter(|&t| tpr(t) >= 0.95)
                            .fold(f64::MIN, f64::max);
                        c.val_out.iter().filter(|&&v| v < tau).count() as f64 / 40.0
                    }
                })
                .collect();
            let mut best = 0;
            for i in 1..evals.len() {
                if evals[i] > evals[best] {
                    best = i;
                }
            }
            assert_eq!(choice.best, best);
            for (r, e) in choice.table.iter().zip(&evals) {
                assert!((r.metric - e).abs() <= 1e-12);
            }
        }
    }
}
