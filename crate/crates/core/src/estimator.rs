//! Gaussian fits of feature matrices and their eigendecompositions.
//!
//! Both estimators use the biased divisor `n`:
//!
//! - conditional (tied covariance): `mu_c` is the class mean and
//!   `Sigma = (1/n) sum_c sum_{i: t_i = c} (x_i - mu_c)(x_i - mu_c)^T`;
//! - marginal: `mu` is the global mean and
//!   `Sigma = (1/n) sum_i (x_i - mu)(x_i - mu)^T`.
//!
//! Singular covariances (always the case when `d > n`) are handled by
//! flooring eigenvalues in [`decompose`], never by ridge-adding to `Sigma`.

use crate::featureio::FeatureMatrix;
use crate::linalg::{jacobi_eigen, Matrix};

pub const DEFAULT_FLOOR_SCALE: f64 = 1e-10;
pub const JACOBI_REL_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Allowed `|a_ij - a_ji|`, relative to `max(1, max |a|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("need at least 2 samples, got {rows}")]
    TooFewSamples { rows: usize },
    #[error("{labels} labels for {rows} feature rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("label out of range: {label} (num_classes = {num_classes})")]
    LabelOutOfRange { label: u32, num_classes: usize },
    #[error("covariance is not symmetric (max |a_ij - a_ji| = {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("floor_scale must be positive and finite, got {0}")]
    InvalidFloorScale(f64),
    #[error("Jacobi eigensolver did not converge in {sweeps} sweeps (off-diagonal norm {off_diagonal:e} > {threshold:e})")]
    NoConvergence {
        sweeps: usize,
        off_diagonal: f64,
        threshold: f64,
    },
    #[error("invalid model: {0}")]
    Invalid(String),
}

impl EstimatorError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NoConvergence { .. } | Self::NotSymmetric { .. })
    }
}

pub type Result<T, E = EstimatorError> = std::result::Result<T, E>;

/// Eigendecomposition of a covariance matrix with floored eigenvalues.
///
/// Eigenvalues are sorted descending; row `i` of `eigenvectors` is the unit
/// eigenvector `u_{i+1}`, signed so its largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
    floor: f64,
    floor_hits: usize,
}

impl Spectrum {
    /// Rebuilds a spectrum from exported parts, checking its invariants.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: Matrix, floor: f64) -> Result<Self> {
        let d = eigenvalues.len();
        if d == 0 || eigenvectors.rows() != d || eigenvectors.cols() != d {
            return Err(EstimatorError::Invalid(format!(
                "{d} eigenvalues with a {}x{} eigenvector matrix",
                eigenvectors.rows(),
                eigenvectors.cols()
            )));
        }
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(EstimatorError::Invalid(format!(
                "floor must be positive, got {floor}"
            )));
        }
        if eigenvalues.iter().any(|&l| !(l >= floor) || !l.is_finite()) {
            return Err(EstimatorError::Invalid("eigenvalue below the floor".into()));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(EstimatorError::Invalid(
                "eigenvalues are not descending".into(),
            ));
        }
        let gram = eigenvectors.matmul(&eigenvectors.transpose());
        if gram.max_abs_diff(&Matrix::identity(d)) > 1e-8 {
            return Err(EstimatorError::Invalid(
                "eigenvectors are not orthonormal".into(),
            ));
        }
        let floor_hits = eigenvalues.iter().filter(|&&l| l == floor).count();
        Ok(Self {
            eigenvalues,
            eigenvectors,
            floor,
            floor_hits,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Rows are components.
    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    /// Unit eigenvector of the `i`-th largest eigenvalue (0-based).
    pub fn component(&self, i: usize) -> &[f64] {
        self.eigenvectors.row(i)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Number of eigenvalues raised to the floor.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    /// `U^T diag(lambda) U`.
    pub fn reconstruct(&self) -> Matrix {
        let u = &self.eigenvectors;
        let d = self.dim();
        let mut out = Matrix::zeros(d, d);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let uk = u.row(k);
            for i in 0..d {
                let a = lambda * uk[i];
                for j in 0..d {
                    out[(i, j)] += a * uk[j];
                }
            }
        }
        out
    }

    /// `y = U v`, the principal-component scores of a centered vector.
    pub fn project(&self, centered: &[f64]) -> Vec<f64> {
        self.eigenvectors.mul_vec(centered)
    }

    /// Test-only hook for building deliberately non-orthonormal spectra.
    #[cfg(test)]
    pub(crate) fn with_eigenvectors_unchecked(&self, eigenvectors: Matrix) -> Self {
        Self {
            eigenvectors,
            ..self.clone()
        }
    }
}

/// Symmetric eigendecomposition of `covariance` with eigenvalue flooring.
///
/// Every eigenvalue below `floor_scale * max(lambda_max, 1)` is raised to
/// that floor. Eigenvalue ties keep the solver's column order.
pub fn decompose(covariance: &Matrix, floor_scale: f64) -> Result<Spectrum> {
    if !(floor_scale > 0.0) || !floor_scale.is_finite() {
        return Err(EstimatorError::InvalidFloorScale(floor_scale));
    }
    if covariance.rows() == 0 || covariance.rows() != covariance.cols() {
        return Err(EstimatorError::Invalid(format!(
            "covariance must be square and non-empty, got {}x{}",
            covariance.rows(),
            covariance.cols()
        )));
    }
    let asymmetry = covariance.asymmetry();
    if asymmetry > SYMMETRY_TOL * covariance.max_abs().max(1.0) {
        return Err(EstimatorError::NotSymmetric { asymmetry });
    }
    let raw = jacobi_eigen(covariance, JACOBI_REL_TOL, JACOBI_MAX_SWEEPS).map_err(|e| {
        EstimatorError::NoConvergence {
            sweeps: e.sweeps,
            off_diagonal: e.off_diagonal,
            threshold: e.threshold,
        }
    })?;

    let d = covariance.rows();
    let mut order: Vec<usize> = (0..d).collect();
    // Stable: ties keep column order.
    order.sort_by(|&a, &b| raw.values[b].total_cmp(&raw.values[a]));

    let lambda_max = raw.values[order[0]];
    let floor = floor_scale * lambda_max.max(1.0);
    let mut eigenvalues = Vec::with_capacity(d);
    let mut eigenvectors = Matrix::zeros(d, d);
    let mut floor_hits = 0;
    for (row, &col) in order.iter().enumerate() {
        let mut lambda = raw.values[col];
        if lambda < floor {
            lambda = floor;
            floor_hits += 1;
        }
        eigenvalues.push(lambda);
        let target = eigenvectors.row_mut(row);
        for (k, t) in target.iter_mut().enumerate() {
            *t = raw.vectors[(k, col)];
        }
        // First largest-magnitude entry decides the sign.
        let mut lead = 0;
        for k in 1..d {
            if target[k].abs() > target[lead].abs() {
                lead = k;
            }
        }
        if target[lead] < 0.0 {
            target.iter_mut().for_each(|t| *t = -*t);
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        floor,
        floor_hits,
    })
}

/// Common view of the two fitted models used by the scorers.
pub trait GaussianModel {
    fn spectrum(&self) -> &Spectrum;
    /// Class means for the conditional model, the single global mean for
    /// the marginal one.
    fn means(&self) -> &[Vec<f64>];
    fn covariance(&self) -> &Matrix;

    fn dim(&self) -> usize {
        self.spectrum().dim()
    }
}

/// Class-conditional Gaussians with a shared (tied) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    means: Vec<Vec<f64>>,
    covariance: Matrix,
    priors: Vec<f64>,
    class_counts: Vec<usize>,
    spectrum: Spectrum,
}

impl ConditionalGaussian {
    /// Reassembles an exported model.
    pub fn from_parts(
        means: Vec<Vec<f64>>,
        covariance: Matrix,
        priors: Vec<f64>,
        class_counts: Vec<usize>,
        spectrum: Spectrum,
    ) -> Result<Self> {
        let d = spectrum.dim();
        if means.is_empty() || means.iter().any(|m| m.len() != d) {
            return Err(EstimatorError::Invalid(
                "class means do not match the spectrum".into(),
            ));
        }
        if covariance.rows() != d || covariance.cols() != d {
            return Err(EstimatorError::Invalid(
                "covariance does not match the spectrum".into(),
            ));
        }
        if priors.len() != means.len() || class_counts.len() != means.len() {
            return Err(EstimatorError::Invalid(
                "one prior and count per class required".into(),
            ));
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|&p| !(p > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(EstimatorError::Invalid(
                "priors must be positive and sum to 1".into(),
            ));
        }
        Ok(Self {
            means,
            covariance,
            priors,
            class_counts,
            spectrum,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Prior-weighted mean of the class means, i.e. the training-set mean.
    pub fn global_mean(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (m, &p) in self.means.iter().zip(&self.priors) {
            for (gi, mi) in g.iter_mut().zip(m) {
                *gi += p * mi;
            }
        }
        g
    }
}

impl GaussianModel for ConditionalGaussian {
    fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    fn means(&self) -> &[Vec<f64>] {
        &self.means
    }
    fn covariance(&self) -> &Matrix {
        &self.covariance
    }
}

/// A single Gaussian over all samples, ignoring labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalGaussian {
    mean: Vec<Vec<f64>>,
    covariance: Matrix,
    n_samples: usize,
    spectrum: Spectrum,
}

impl MarginalGaussian {
    pub fn from_parts(
        mean: Vec<f64>,
        covariance: Matrix,
        n_samples: usize,
        spectrum: Spectrum,
    ) -> Result<Self> {
        let d = spectrum.dim();
        if mean.len() != d || covariance.rows() != d || covariance.cols() != d {
            return Err(EstimatorError::Invalid(
                "mean/covariance do not match the spectrum".into(),
            ));
        }
        Ok(Self {
            mean: vec![mean],
            covariance,
            n_samples,
            spectrum,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean[0]
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
}

impl GaussianModel for MarginalGaussian {
    fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }
    fn means(&self) -> &[Vec<f64>] {
        &self.mean
    }
    fn covariance(&self) -> &Matrix {
        &self.covariance
    }
}

fn warn_rank(rows: usize, dims: usize) {
    if dims > rows {
        log::warn!("d = {dims} exceeds n = {rows}: covariance is rank deficient, eigenvalue floor will apply");
    }
}

/// Adds `(x - mu)(x - mu)^T` into the upper triangle of `acc`.
fn accumulate_outer(acc: &mut Matrix, x: &[f32], mu: &[f64], scratch: &mut [f64]) {
    let d = mu.len();
    for (s, (&xi, &mi)) in scratch.iter_mut().zip(x.iter().zip(mu)) {
        *s = f64::from(xi) - mi;
    }
    for i in 0..d {
        let a = scratch[i];
        if a == 0.0 {
            continue;
        }
        let row = acc.row_mut(i);
        for j in i..d {
            row[j] += a * scratch[j];
        }
    }
}

fn finish_covariance(mut acc: Matrix, n: usize) -> Matrix {
    let d = acc.rows();
    let inv = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            let v = acc[(i, j)] * inv;
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
    acc
}

pub fn fit_conditional(
    features: &FeatureMatrix,
    labels: &[u32],
    num_classes: usize,
    floor_scale: f64,
) -> Result<ConditionalGaussian> {
    let (n, d) = (features.rows(), features.dims());
    if labels.len() != n {
        return Err(EstimatorError::LabelCount {
            labels: labels.len(),
            rows: n,
        });
    }
    if n < 2 {
        return Err(EstimatorError::TooFewSamples { rows: n });
    }
    let mut counts = vec![0usize; num_classes];
    let mut sums = vec![vec![0.0f64; d]; num_classes];
    for (x, &t) in features.iter_rows().zip(labels) {
        let c = t as usize;
        if c >= num_classes {
            return Err(EstimatorError::LabelOutOfRange {
                label: t,
                num_classes,
            });
        }
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(x) {
            *s += f64::from(v);
        }
    }
    if let Some(class) = counts.iter().position(|&k| k == 0) {
        return Err(EstimatorError::EmptyClass { class });
    }
    warn_rank(n, d);
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &k)| s.into_iter().map(|v| v / k as f64).collect())
        .collect();

    let mut acc = Matrix::zeros(d, d);
    let mut scratch = vec![0.0; d];
    for (x, &t) in features.iter_rows().zip(labels) {
        accumulate_outer(&mut acc, x, &means[t as usize], &mut scratch);
    }
    let covariance = finish_covariance(acc, n);
    let spectrum = decompose(&covariance, floor_scale)?;
    let priors = counts.iter().map(|&k| k as f64 / n as f64).collect();
    Ok(ConditionalGaussian {
        means,
        covariance,
        priors,
        class_counts: counts,
        spectrum,
    })
}

pub fn fit_marginal(features: &FeatureMatrix, floor_scale: f64) -> Result<MarginalGaussian> {
    let (n, d) = (features.rows(), features.dims());
    if n < 2 {
        return Err(EstimatorError::TooFewSamples { rows: n });
    }
    warn_rank(n, d);
    let mut mean = vec![0.0f64; d];
    for x in features.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut acc = Matrix::zeros(d, d);
    let mut scratch = vec![0.0; d];
    for x in features.iter_rows() {
        accumulate_outer(&mut acc, x, &mean, &mut scratch);
    }
    let covariance = finish_covariance(acc, n);
    let spectrum = decompose(&covariance, floor_scale)?;
    Ok(MarginalGaussian {
        mean: vec![mean],
        covariance,
        n_samples: n,
        spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, dims: usize, seed: u64) -> FeatureMatrix {
        let mut rng = SplitMix64::new(seed);
        FeatureMatrix::new(
            rows,
            dims,
            (0..rows * dims)
                .map(|_| (rng.next_normal() * 3.0 + 1.0) as f32)
                .collect(),
        )
        .unwrap()
    }

    /// Straightforward double loop, independent of the fitted path.
    fn brute_covariance(x: &FeatureMatrix, labels: &[u32], c: usize) -> Matrix {
        let (n, d) = (x.rows(), x.dims());
        let mut means = vec![vec![0.0; d]; c];
        let mut counts = vec![0.0; c];
        for i in 0..n {
            counts[labels[i] as usize] += 1.0;
            for j in 0..d {
                means[labels[i] as usize][j] += x.row(i)[j] as f64;
            }
        }
        for k in 0..c {
            for j in 0..d {
                means[k][j] /= counts[k];
            }
        }
        let mut cov = Matrix::zeros(d, d);
        for i in 0..n {
            let m = &means[labels[i] as usize];
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += (x.row(i)[a] as f64 - m[a]) * (x.row(i)[b] as f64 - m[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] /= n as f64;
            }
        }
        cov
    }

    #[test]
    fn two_class_square() {
        let x =
            FeatureMatrix::from_rows(&[[0.0f32, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]).unwrap();
        let m = fit_conditional(&x, &[0, 0, 1, 1], 2, DEFAULT_FLOOR_SCALE).unwrap();
        assert_eq!(m.means(), &[vec![1.0, 0.0], vec![1.0, 2.0]]);
        assert_eq!(
            m.covariance(),
            &Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]])
        );
        assert_eq!(m.priors(), &[0.5, 0.5]);
        assert_eq!(m.spectrum().floor_hits(), 1);
        assert_eq!(m.spectrum().eigenvalues(), &[1.0, 1e-10]);
    }

    #[test]
    fn one_sample_per_class_floors_everything() {
        let x = FeatureMatrix::from_rows(&[[1.0f32, 5.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let m = fit_conditional(&x, &[0, 1, 2], 3, 1e-6).unwrap();
        assert_eq!(m.covariance().max_abs(), 0.0);
        assert!(m.spectrum().eigenvalues().iter().all(|&l| l == 1e-6));
        assert_eq!(m.spectrum().floor_hits(), 2);
    }

    #[test]
    fn empty_class_is_an_error() {
        let x = random_matrix(4, 2, 1);
        let err = fit_conditional(&x, &[0, 0, 2, 2], 3, DEFAULT_FLOOR_SCALE).unwrap_err();
        assert!(matches!(err, EstimatorError::EmptyClass { class: 1 }));
    }

    #[test]
    fn conditional_matches_brute_force() {
        let x = random_matrix(60, 6, 17);
        let labels: Vec<u32> = (0..60).map(|i| (i % 3) as u32).collect();
        let m = fit_conditional(&x, &labels, 3, DEFAULT_FLOOR_SCALE).unwrap();
        assert!(
            m.covariance()
                .max_abs_diff(&brute_covariance(&x, &labels, 3))
                <= 1e-12
        );
        let total: f64 = m.priors().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn marginal_two_points() {
        let x = FeatureMatrix::from_rows(&[[-1.0f32, 0.0], [1.0, 0.0]]).unwrap();
        let m = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
        assert_eq!(m.mean(), &[0.0, 0.0]);
        assert_eq!(
            m.covariance(),
            &Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]])
        );
    }

    #[test]
    fn marginal_identical_points() {
        let x = FeatureMatrix::from_rows(&[[2.0f32, 3.0, 4.0]; 5]).unwrap();
        let m = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
        assert_eq!(m.covariance().max_abs(), 0.0);
        assert!(m
            .spectrum()
            .eigenvalues()
            .iter()
            .all(|&l| l == DEFAULT_FLOOR_SCALE));
        assert_eq!(
            fit_marginal(&FeatureMatrix::from_rows(&[[1.0f32]]).unwrap(), 1e-10)
                .unwrap_err()
                .to_string(),
            "need at least 2 samples, got 1"
        );
    }

    #[test]
    fn marginal_matches_brute_force() {
        let x = random_matrix(100, 8, 4);
        let m = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
        assert!(
            m.covariance()
                .max_abs_diff(&brute_covariance(&x, &[0; 100], 1))
                <= 1e-12
        );
    }

    #[test]
    fn single_class_tied_equals_marginal() {
        let x = random_matrix(40, 5, 9);
        let c = fit_conditional(&x, &[0; 40], 1, DEFAULT_FLOOR_SCALE).unwrap();
        let m = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
        assert_eq!(c.covariance(), m.covariance());
        assert_eq!(c.means()[0], m.mean());
    }

    #[test]
    fn decompose_identity() {
        let s = decompose(&Matrix::identity(4), DEFAULT_FLOOR_SCALE).unwrap();
        assert_eq!(s.eigenvalues(), &[1.0; 4]);
        assert!(s.reconstruct().max_abs_diff(&Matrix::identity(4)) <= 1e-8);
    }

    #[test]
    fn decompose_diagonal() {
        let s = decompose(&Matrix::diag(&[1.0, 4.0]), DEFAULT_FLOOR_SCALE).unwrap();
        assert_eq!(s.eigenvalues(), &[4.0, 1.0]);
        assert_eq!(s.component(0), &[0.0, 1.0]);
        assert_eq!(s.component(1), &[1.0, 0.0]);
    }

    #[test]
    fn decompose_rejects_asymmetric_and_bad_floor() {
        let a = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]);
        assert!(matches!(
            decompose(&a, 1e-10),
            Err(EstimatorError::NotSymmetric { .. })
        ));
        assert!(matches!(
            decompose(&Matrix::identity(2), 0.0),
            Err(EstimatorError::InvalidFloorScale(_))
        ));
    }

    #[test]
    fn decompose_random_spd_reconstructs() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..5 {
            let a = Matrix::from_vec(10, 10, (0..100).map(|_| rng.next_normal()).collect());
            let spd = a.transpose().matmul(&a);
            let s = decompose(&spd, DEFAULT_FLOOR_SCALE).unwrap();
            assert_eq!(s.floor_hits(), 0);
            let lmax = s.eigenvalues()[0];
            assert!(s.reconstruct().max_abs_diff(&spd) <= 1e-8 * lmax);
            let u = s.eigenvectors();
            assert!(u.matmul(&u.transpose()).max_abs_diff(&Matrix::identity(10)) <= 1e-8);
            assert!(s.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
            assert!(
                ((s.eigenvalues().iter().sum::<f64>() - spd.trace()) / spd.trace()).abs() <= 1e-8
            );
            for i in 0..10 {
                let row = s.component(i);
                let lead = row
                    .iter()
                    .cloned()
                    .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                assert!(lead > 0.0);
            }
        }
    }

    #[test]
    fn spectrum_from_parts_validates() {
        let s = decompose(&Matrix::diag(&[3.0, 2.0]), 1e-10).unwrap();
        let back = Spectrum::from_parts(
            s.eigenvalues().to_vec(),
            s.eigenvectors().clone(),
            s.floor(),
        )
        .unwrap();
        assert_eq!(back, s);
        assert!(Spectrum::from_parts(vec![2.0, 3.0], Matrix::identity(2), 1e-10).is_err());
        assert!(Spectrum::from_parts(vec![3.0, 2.0], Matrix::diag(&[1.0, 2.0]), 1e-10).is_err());
    }

    /// Largest principal angle cosine deficit between two row spaces.
    fn span_gap(a: &Matrix, b: &Matrix, rows: std::ops::Range<usize>) -> f64 {
        let mut worst = 0.0f64;
        for i in rows.clone() {
            let norm2: f64 = rows
                .clone()
                .map(|j| crate::linalg::dot(a.row(i), b.row(j)).powi(2))
                .sum();
            worst = worst.max(1.0 - norm2.sqrt());
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn translation_equivariance(seed in any::<u64>(), shift in proptest::collection::vec(-64i32..64, 4)) {
            // Multiples of 1/8 plus integer shifts translate exactly in f32.
            let mut rng = SplitMix64::new(seed);
            let x = FeatureMatrix::new(30, 4, (0..120).map(|_| ((rng.next_normal() * 24.0).round() / 8.0) as f32).collect()).unwrap();
            let shifted = FeatureMatrix::new(30, 4, x.values().iter().enumerate().map(|(i, &v)| v + shift[i % 4] as f32).collect()).unwrap();
            let labels: Vec<u32> = (0..30).map(|i| (i % 2) as u32).collect();
            let a = fit_conditional(&x, &labels, 2, DEFAULT_FLOOR_SCALE).unwrap();
            let b = fit_conditional(&shifted, &labels, 2, DEFAULT_FLOOR_SCALE).unwrap();
            prop_assert!(a.covariance().max_abs_diff(b.covariance()) <= 1e-10);
            for (ma, mb) in a.means().iter().zip(b.means()) {
                for j in 0..4 {
                    prop_assert!((mb[j] - ma[j] - f64::from(shift[j])).abs() <= 1e-10);
                }
            }
            for (ea, eb) in a.spectrum().eigenvalues().iter().zip(b.spectrum().eigenvalues()) {
                prop_assert!((ea - eb).abs() <= 1e-10);
            }
            let ma = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
            let mb = fit_marginal(&shifted, DEFAULT_FLOOR_SCALE).unwrap();
            prop_assert!(ma.covariance().max_abs_diff(mb.covariance()) <= 1e-10);
        }

        #[test]
        fn scaling_scales_eigenvalues(seed in any::<u64>()) {
            // Powers of two keep the f32 features exact.
            let s = 4.0f64;
            let x = random_matrix(40, 5, seed);
            let scaled = FeatureMatrix::new(40, 5, x.values().iter().map(|&v| v * s as f32).collect()).unwrap();
            let a = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
            let b = fit_marginal(&scaled, DEFAULT_FLOOR_SCALE).unwrap();
            for (ea, eb) in a.spectrum().eigenvalues().iter().zip(b.spectrum().eigenvalues()) {
                prop_assert!((eb - s * s * ea).abs() <= 1e-9 * eb);
            }
            prop_assert!(span_gap(a.spectrum().eigenvectors(), b.spectrum().eigenvectors(), 0..2) <= 1e-6);
        }

        #[test]
        fn trace_is_preserved(seed in any::<u64>()) {
            let x = random_matrix(25, 6, seed);
            let m = fit_marginal(&x, DEFAULT_FLOOR_SCALE).unwrap();
            let t = m.covariance().trace();
            let st: f64 = m.spectrum().eigenvalues().iter().sum();
            prop_assert!(((st - t) / t).abs() <= 1e-8);
        }
    }
}
