//! Detection metrics on score pairs (higher = more in-distribution).
//!
//! Thresholds range over the observed scores (plus `+inf`), and a sample
//! is called in-distribution when its score is `>= tau`. AUROC uses the
//! Mann–Whitney statistic with half credit for ties.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} scores are empty")]
    Empty(&'static str),
    #[error("non-finite score in the {0} scores")]
    NonFinite(&'static str),
    #[error("tpr target must lie in (0, 1], got {0}")]
    BadTarget(String),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

fn check(in_scores: &[f64], out_scores: &[f64]) -> Result<()> {
    if in_scores.is_empty() {
        return Err(MetricsError::Empty("in-distribution"));
    }
    if out_scores.is_empty() {
        return Err(MetricsError::Empty("out-of-distribution"));
    }
    if in_scores.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("in-distribution"));
    }
    if out_scores.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("out-of-distribution"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `P(in > out) + P(in = out) / 2` over all pairs.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    check(in_scores, out_scores)?;
    let mut tagged: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&v| (v, true))
        .chain(out_scores.iter().map(|&v| (v, false)))
        .collect();
    tagged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // Twice the U statistic, kept integral.
    let mut twice_u: u128 = 0;
    let mut out_below: u128 = 0;
    let mut i = 0;
    while i < tagged.len() {
        let mut j = i;
        let (mut n_in, mut n_out) = (0u128, 0u128);
        while j < tagged.len() && tagged[j].0 == tagged[i].0 {
            if tagged[j].1 {
                n_in += 1;
            } else {
                n_out += 1;
            }
            j += 1;
        }
        twice_u += n_in * (2 * out_below + n_out);
        out_below += n_out;
        i = j;
    }
    let pairs = in_scores.len() as f64 * out_scores.len() as f64;
    Ok(twice_u as f64 / (2.0 * pairs))
}

/// Count of `values` (sorted ascending) that are `>= tau`.
fn count_at_least(sorted: &[f64], tau: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < tau)
}

/// True-negative rate at the largest observed in-score threshold that keeps
/// at least `tpr_target` of the in-distribution scores.
pub fn tnr_at_tpr(in_scores: &[f64], out_scores: &[f64], tpr_target: f64) -> Result<f64> {
    check(in_scores, out_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(MetricsError::BadTarget(tpr_target.to_string()));
    }
    let n = in_scores.len();
    let desc: Vec<f64> = sorted(in_scores).into_iter().rev().collect();
    // Smallest k with k / n >= target, evaluated with the same predicate a
    // threshold scan would use.
    let meets = |k: usize| k as f64 / n as f64 >= tpr_target;
    let mut k = ((tpr_target * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && meets(k - 1) {
        k -= 1;
    }
    while !meets(k) {
        k += 1;
    }
    let tau = desc[k - 1];
    let out_sorted = sorted(out_scores);
    let below = out_sorted.partition_point(|&v| v < tau);
    Ok(below as f64 / out_scores.len() as f64)
}

/// Best balanced accuracy `(TPR + TNR) / 2` over all thresholds.
pub fn detection_accuracy(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    check(in_scores, out_scores)?;
    let ins = sorted(in_scores);
    let outs = sorted(out_scores);
    let (n_in, n_out) = (ins.len() as f64, outs.len() as f64);
    // tau = +inf: TPR 0, TNR 1.
    let mut best = 0.5 * (0.0 / n_in + 1.0);
    for &tau in ins.iter().chain(&outs) {
        let tpr = count_at_least(&ins, tau) as f64 / n_in;
        let tnr = outs.partition_point(|&v| v < tau) as f64 / n_out;
        let acc = 0.5 * (tpr + tnr);
        if acc > best {
            best = acc;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub tnr_at_tpr95: f64,
    pub detection_accuracy: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl DetectionReport {
    pub fn compute(in_scores: &[f64], out_scores: &[f64]) -> Result<Self> {
        Ok(Self {
            auroc: auroc(in_scores, out_scores)?,
            tnr_at_tpr95: tnr_at_tpr(in_scores, out_scores, 0.95)?,
            detection_accuracy: detection_accuracy(in_scores, out_scores)?,
            n_in: in_scores.len(),
            n_out: out_scores.len(),
        })
    }
}

/// Aligned text table, metrics as percentages with two decimals.
pub fn format_table<S: AsRef<str>>(rows: &[(S, DetectionReport)]) -> String {
    let width = rows
        .iter()
        .map(|(n, _)| n.as_ref().chars().count())
        .chain(std::iter::once("Score".len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>12}  {:>9}  {:>7}  {:>7}",
        "Score", "AUROC", "TNR@TPR95", "DetAcc", "n_in", "n_out"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>12.2}  {:>9.2}  {:>7}  {:>7}",
            name.as_ref(),
            100.0 * r.auroc,
            100.0 * r.tnr_at_tpr95,
            100.0 * r.detection_accuracy,
            r.n_in,
            r.n_out
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// O(n^2) pairwise oracle.
    fn brute_auroc(a: &[f64], b: &[f64]) -> f64 {
        let mut credit = 0.0;
        for &x in a {
            for &y in b {
                if x > y {
                    credit += 1.0;
                } else if x == y {
                    credit += 0.5;
                }
            }
        }
        credit / (a.len() * b.len()) as f64
    }

    /// Scan of every observed threshold.
    fn scan(a: &[f64], b: &[f64]) -> (f64, f64) {
        let mut taus: Vec<f64> = a.iter().chain(b).cloned().collect();
        taus.push(f64::INFINITY);
        let tpr = |t: f64| a.iter().filter(|&&v| v >= t).count() as f64 / a.len() as f64;
        let tnr = |t: f64| b.iter().filter(|&&v| v < t).count() as f64 / b.len() as f64;
        let best_acc = taus
            .iter()
            .map(|&t| 0.5 * (tpr(t) + tnr(t)))
            .fold(f64::MIN, f64::max);
        let tau95 = a
            .iter()
            .cloned()
            .filter(|&t| tpr(t) >= 0.95)
            .fold(f64::MIN, f64::max);
        (tnr(tau95), best_acc)
    }

    fn tied_scores(n: usize, rng: &mut SplitMix64, shift: f64) -> Vec<f64> {
        (0..n)
            .map(|_| (rng.next_normal() * 2.0 + shift).round() / 2.0)
            .collect()
    }

    #[test]
    fn perfect_separation() {
        assert_eq!(auroc(&[1.0, 2.0], &[-1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(tnr_at_tpr(&[1.0, 2.0], &[-1.0, 0.0], 0.95).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&[1.0, 2.0], &[-1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn identical_multisets() {
        let v = [0.1, 0.5, 0.5, 2.0, -3.0];
        assert_eq!(auroc(&v, &v).unwrap(), 0.5);
        let tnr = tnr_at_tpr(&v, &v, 0.95).unwrap();
        assert!(tnr <= 1.0 - 0.95 + 1.0 / 5.0);
        let acc = detection_accuracy(&v, &v).unwrap();
        assert!((0.5..=0.5 + 1.0 / 5.0).contains(&acc));
    }

    #[test]
    fn empty_side_is_an_error() {
        assert_eq!(
            auroc(&[], &[1.0]),
            Err(MetricsError::Empty("in-distribution"))
        );
        assert_eq!(
            detection_accuracy(&[1.0], &[]),
            Err(MetricsError::Empty("out-of-distribution"))
        );
        assert!(matches!(
            tnr_at_tpr(&[1.0], &[1.0], 0.0),
            Err(MetricsError::BadTarget(_))
        ));
    }

    #[test]
    fn auroc_matches_pairwise_with_ties() {
        let mut rng = SplitMix64::new(50);
        for _ in 0..50 {
            let a = tied_scores(50, &mut rng, 0.7);
            let b = tied_scores(50, &mut rng, 0.0);
            assert!((auroc(&a, &b).unwrap() - brute_auroc(&a, &b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn threshold_metrics_match_scan() {
        let mut rng = SplitMix64::new(51);
        for _ in 0..50 {
            let a = tied_scores(20, &mut rng, 1.0);
            let b = tied_scores(20, &mut rng, 0.0);
            let (tnr, acc) = scan(&a, &b);
            assert_eq!(tnr_at_tpr(&a, &b, 0.95).unwrap(), tnr);
            assert_eq!(detection_accuracy(&a, &b).unwrap(), acc);
        }
    }

    #[test]
    fn table_layout() {
        let r = DetectionReport {
            auroc: 0.9392,
            tnr_at_tpr95: 0.5,
            detection_accuracy: 0.875,
            n_in: 10,
            n_out: 20,
        };
        let t = format_table(&[("conditional", r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("conditional"));
        assert!(lines[1].contains("  93.92  "));
        assert_eq!(lines[0].len(), lines[1].len());
    }

    proptest! {
        #[test]
        fn monotone_invariance_and_swap(seed in any::<u64>(), scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
            let mut rng = SplitMix64::new(seed);
            let a: Vec<f64> = (0..30).map(|_| rng.next_normal() + 0.5).collect();
            let b: Vec<f64> = (0..25).map(|_| rng.next_normal()).collect();
            let base = auroc(&a, &b).unwrap();
            let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
            let aff = |v: &[f64]| v.iter().map(|x| scale * x + offset).collect::<Vec<_>>();
            prop_assert_eq!(auroc(&exp(&a), &exp(&b)).unwrap(), base);
            prop_assert_eq!(auroc(&aff(&a), &aff(&b)).unwrap(), base);
            prop_assert!((auroc(&b, &a).unwrap() - (1.0 - base)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(detection_accuracy(&a, &b).unwrap() >= 0.5);
        }

        #[test]
        fn permutation_invariance(seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let mut a = tied_scores(15, &mut rng, 0.5);
            let mut b = tied_scores(12, &mut rng, 0.0);
            let r1 = DetectionReport::compute(&a, &b).unwrap();
            rng.shuffle(&mut a);
            rng.shuffle(&mut b);
            prop_assert_eq!(DetectionReport::compute(&a, &b).unwrap(), r1);
        }
    }
}
