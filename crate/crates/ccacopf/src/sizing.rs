//! Scenario-count arithmetic for the two solution methods.
//!
//! For a convex program with `d` decision variables solved over `n` i.i.d.
//! scenarios, the probability that the optimizer's violation probability
//! exceeds ε is bounded by the binomial tail
//!
//! ```text
//! β(n, d, ε) = Σ_{i=0}^{d−1} C(n,i) εⁱ (1−ε)^{n−i}
//! ```
//!
//! The closed-form sufficient sample counts are
//!
//! ```text
//! conventional:  n′ ≥ (2/ε)(ln(1/β) + d)
//! two-stage:     n₁ ≥ d + 1,  n₂ ≥ (1/ε)·ln(1/β),  n = n₁ + n₂
//! ```
//!
//! Published tabulations of the conventional bound truncate the fractional
//! part instead of rounding up; [`Rounding`] selects either convention.

use crate::grid::NetworkCase;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SizingError {
    #[error("epsilon must lie strictly inside (0, 1)")]
    BadEpsilon,
    #[error("beta must lie strictly inside (0, 1)")]
    BadBeta,
    #[error("need n ≥ d ≥ 1, got n = {n}, d = {d}")]
    BadCounts { n: usize, d: usize },
}

/// Violation level ε and confidence parameter β, both in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RiskParams<T: Scalar> {
    pub epsilon: T,
    pub beta: T,
}

impl<T: Scalar> RiskParams<T> {
    pub fn new(epsilon: T, beta: T) -> Result<Self, SizingError> {
        if !(epsilon > T::zero() && epsilon < T::one()) {
            return Err(SizingError::BadEpsilon);
        }
        if !(beta > T::zero() && beta < T::one()) {
            return Err(SizingError::BadBeta);
        }
        Ok(RiskParams { epsilon, beta })
    }
}

/// How to turn the fractional conventional-method bound into a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Smallest integer satisfying the bound.
    #[default]
    Ceil,
    /// Drop the fractional part (matches the published tables).
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizingResult {
    pub d: usize,
    pub n1: usize,
    pub n2: usize,
    pub n_fast: usize,
    pub n_csm: usize,
}

/// Natural log of the binomial tail `Σ_{i<d} C(n,i) εⁱ (1−ε)^{n−i}`.
///
/// Computed by summing log-terms with an incremental log-binomial, so it
/// stays finite and accurate for counts around 10⁴ and far beyond where
/// the linear-space value underflows.
pub fn beta_exact_ln<T: Scalar>(n: usize, d: usize, epsilon: T) -> Result<T, SizingError> {
    if !(epsilon > T::zero() && epsilon < T::one()) {
        return Err(SizingError::BadEpsilon);
    }
    if d < 1 || n < d {
        return Err(SizingError::BadCounts { n, d });
    }
    let nf = T::c(n as f64);
    let ln_eps = epsilon.ln();
    let ln_1m = (T::one() - epsilon).ln();

    // ln C(n,i) built incrementally; collect term logs then log-sum-exp.
    let mut ln_terms = Vec::with_capacity(d);
    let mut ln_choose = T::zero();
    for i in 0..d {
        let fi = T::c(i as f64);
        if i > 0 {
            ln_choose += (nf - fi + T::one()).ln() - fi.ln();
        }
        ln_terms.push(ln_choose + fi * ln_eps + (nf - fi) * ln_1m);
    }
    let m = ln_terms.iter().copied().fold(T::c(f64::NEG_INFINITY), |a, b| a.max(b));
    let sum: T = ln_terms.iter().map(|&t| (t - m).exp()).sum();
    Ok(m + sum.ln())
}

/// Exact confidence value `β(n, d, ε)` in [0, 1]; underflows to zero for
/// very deep tails (use [`beta_exact_ln`] to compare those).
pub fn beta_exact<T: Scalar>(n: usize, d: usize, epsilon: T) -> Result<T, SizingError> {
    Ok(beta_exact_ln(n, d, epsilon)?.exp().min(T::one()))
}

/// Conventional scenario-method sample bound `(2/ε)(ln(1/β) + d)`.
pub fn csm_size<T: Scalar>(risk: &RiskParams<T>, d: usize, rounding: Rounding) -> usize {
    assert!(d >= 1, "d must be at least 1");
    let rhs = T::c(2.0) / risk.epsilon * ((T::one() / risk.beta).ln() + T::c(d as f64));
    let rhs = rhs.as_f64();
    let n = match rounding {
        Rounding::Ceil => rhs.ceil(),
        Rounding::Truncate => rhs.trunc(),
    };
    (n as usize).max(1)
}

/// Two-stage sample split: `n1 = d + 1` initial scenarios and
/// `n2 = ⌈(1/ε)·ln(1/β)⌉` validation scenarios.
pub fn fast_sizes<T: Scalar>(risk: &RiskParams<T>, d: usize, rounding: Rounding) -> SizingResult {
    assert!(d >= 1, "d must be at least 1");
    let n1 = d + 1;
    let n2 = ((T::one() / risk.beta).ln() / risk.epsilon).as_f64().ceil() as usize;
    SizingResult { d, n1, n2, n_fast: n1 + n2, n_csm: csm_size(risk, d, rounding) }
}

/// Decision-variable counts used when sizing the two methods for a grid
/// case: the two-stage count follows the per-scenario voltage dimension
/// (2 per bus), the conventional count the dispatch dimension (2 per
/// generator).
pub fn case_dims<T: Scalar>(case: &NetworkCase<T>) -> (usize, usize) {
    (2 * case.n_buses(), 2 * case.generators.len())
}

/// The published conventional-method count at d = 10, ε = 0.05, β = 1e−4,
/// which exceeds what the bound evaluates to (768). Table emitters flag it.
const KNOWN_DISCREPANT_D10: usize = 840;

/// One row of the method-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub label: String,
    pub d_fast: usize,
    pub d_csm: usize,
    pub n_fast: usize,
    pub n_csm: usize,
    pub ratio: f64,
    pub note: String,
}

fn d10_note<T: Scalar>(risk: &RiskParams<T>, d: usize, n_csm: usize) -> String {
    let eps_match = (risk.epsilon.as_f64() - 0.05).abs() < 1e-12;
    let beta_match = (risk.beta.as_f64() - 1e-4).abs() < 1e-16;
    if eps_match && beta_match && d == 10 && n_csm != KNOWN_DISCREPANT_D10 {
        format!(
            "published tabulations list {KNOWN_DISCREPANT_D10}; the bound evaluates to {n_csm}"
        )
    } else {
        String::new()
    }
}

/// Sample-size comparison over explicit variable counts (one row per d).
pub fn size_table_for_dims<T: Scalar>(
    risk: &RiskParams<T>,
    dims: &[usize],
    rounding: Rounding,
) -> Vec<SizeRow> {
    dims.iter()
        .map(|&d| {
            let s = fast_sizes(risk, d, rounding);
            SizeRow {
                label: format!("d={d}"),
                d_fast: d,
                d_csm: d,
                n_fast: s.n_fast,
                n_csm: s.n_csm,
                ratio: s.n_csm as f64 / s.n_fast as f64,
                note: d10_note(risk, d, s.n_csm),
            }
        })
        .collect()
}

/// Sample-size comparison over grid cases (one row per case), using
/// [`case_dims`] for the two variable counts.
pub fn size_table_for_cases<T: Scalar>(
    risk: &RiskParams<T>,
    cases: &[NetworkCase<T>],
    rounding: Rounding,
) -> Vec<SizeRow> {
    cases
        .iter()
        .map(|case| {
            let (d_fast, d_csm) = case_dims(case);
            let fast = fast_sizes(risk, d_fast, rounding);
            let n_csm = csm_size(risk, d_csm, rounding);
            SizeRow {
                label: case.name.clone(),
                d_fast,
                d_csm,
                n_fast: fast.n_fast,
                n_csm,
                ratio: n_csm as f64 / fast.n_fast as f64,
                note: d10_note(risk, d_csm, n_csm),
            }
        })
        .collect()
}

pub fn size_rows_to_csv(rows: &[SizeRow]) -> String {
    let mut out = String::from("label,d_fast,d_csm,n_fast,n_csm,ratio,note\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.1},{}\n",
            r.label, r.d_fast, r.d_csm, r.n_fast, r.n_csm, r.ratio, r.note
        ));
    }
    out
}

/// Exact two-sided Clopper–Pearson interval for `k` violations in `n`
/// probes, via bisection on the binomial tails.
pub fn clopper_pearson<T: Scalar>(k: usize, n: usize, confidence: T) -> (T, T) {
    assert!(n > 0 && k <= n);
    let alpha = (T::one() - confidence) / T::c(2.0);
    // P[Bin(n,p) >= k] as a monotone increasing function of p.
    let upper_tail = |p: T| -> T {
        if p <= T::zero() {
            return if k == 0 { T::one() } else { T::zero() };
        }
        if p >= T::one() {
            return T::one();
        }
        // 1 − cdf(k−1) with the same log-space series as beta_exact.
        T::one() - beta_exact(n, k, p).unwrap_or(T::one())
    };
    let bisect = |target: T, increasing_in_p: bool| -> T {
        let mut lo = T::zero();
        let mut hi = T::one();
        for _ in 0..200 {
            let mid = (lo + hi) / T::c(2.0);
            let v = upper_tail(mid);
            let go_right = if increasing_in_p { v < target } else { v > target };
            if go_right {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) / T::c(2.0)
    };
    let lo = if k == 0 { T::zero() } else { bisect(alpha, true) };
    let hi = if k == n {
        T::one()
    } else {
        // P[Bin(n,p) <= k] = beta_exact(n, k+1, p), decreasing in p.
        let mut lo_b = T::zero();
        let mut hi_b = T::one();
        for _ in 0..200 {
            let mid = (lo_b + hi_b) / T::c(2.0);
            let v = beta_exact(n, k + 1, mid).unwrap_or(T::zero());
            if v > alpha {
                lo_b = mid;
            } else {
                hi_b = mid;
            }
        }
        (lo_b + hi_b) / T::c(2.0)
    };
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn risk() -> RiskParams<f64> {
        RiskParams::new(0.05, 1e-4).unwrap()
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert_eq!(RiskParams::new(0.0, 0.5), Err(SizingError::BadEpsilon));
        assert_eq!(RiskParams::new(1.5, 0.5), Err(SizingError::BadEpsilon));
        assert_eq!(RiskParams::new(0.05, 1.0), Err(SizingError::BadBeta));
        assert_eq!(beta_exact(5, 9, 0.1), Err(SizingError::BadCounts { n: 5, d: 9 }));
    }

    #[test]
    fn single_variable_tail_is_bernoulli_power() {
        for n in [1usize, 7, 40] {
            let v = beta_exact(n, 1, 0.1f64).unwrap();
            assert!((v - 0.9f64.powi(n as i32)).abs() <= 1e-12);
        }
    }

    #[test]
    fn vanishing_epsilon_gives_certainty() {
        let v = beta_exact(100, 5, 1e-12f64).unwrap();
        assert!((v - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn tail_is_monotone_in_n_and_d() {
        for (n, d) in [(50usize, 5usize), (400, 30), (2000, 100)] {
            let base = beta_exact_ln(n, d, 0.05f64).unwrap();
            assert!(beta_exact_ln(n + 1, d, 0.05).unwrap() < base);
            assert!(beta_exact_ln(n, d + 1, 0.05).unwrap() > base);
        }
    }

    #[test]
    fn conventional_bound_matches_published_rows() {
        // Truncation mode reproduces the published comparison table.
        for (d, expect) in [(50, 2368), (100, 4368), (200, 8368), (500, 20368)] {
            assert_eq!(csm_size(&risk(), d, Rounding::Truncate), expect);
        }
        // d = 10 evaluates to 768 (the published 840 is inconsistent with
        // the bound).
        assert_eq!(csm_size(&risk(), 10, Rounding::Truncate), 768);
        assert_eq!(csm_size(&risk(), 10, Rounding::Ceil), 769);
    }

    #[test]
    fn two_stage_sizes_match_published_rows() {
        for (d, expect) in [(10, 196), (50, 236), (100, 286), (200, 386), (500, 686)] {
            let s = fast_sizes(&risk(), d, Rounding::Truncate);
            assert_eq!(s.n_fast, expect, "d={d}");
            assert_eq!(s.n1, d + 1);
            assert_eq!(s.n2, 185);
        }
        let tiny = RiskParams::new(0.5, (1.0f64).exp().recip()).unwrap();
        let s = fast_sizes(&tiny, 1, Rounding::Ceil);
        assert_eq!((s.n1, s.n2, s.n_fast), (2, 2, 4));
    }

    #[test]
    fn closed_form_bound_dominates_exact_requirement() {
        for d in [10usize, 50, 100, 200, 500] {
            let n = csm_size(&risk(), d, Rounding::Truncate);
            let ln_beta = beta_exact_ln(n, d, 0.05f64).unwrap();
            assert!(ln_beta <= (1e-4f64).ln(), "d={d}: ln β = {ln_beta}");
        }
    }

    #[test]
    fn two_stage_always_beats_conventional_and_ratio_grows() {
        let mut prev_ratio = 0.0;
        for d in [2usize, 5, 20, 80, 300, 1000] {
            let s = fast_sizes(&risk(), d, Rounding::Ceil);
            assert!(s.n_fast < s.n_csm, "d={d}");
            let ratio = s.n_csm as f64 / s.n_fast as f64;
            assert!(ratio > prev_ratio, "ratio must grow with d");
            prev_ratio = ratio;
        }
    }

    #[test]
    fn d10_row_is_flagged_in_table() {
        let rows = size_table_for_dims(&risk(), &[10, 50], Rounding::Truncate);
        assert!(rows[0].note.contains("840"));
        assert!(rows[0].note.contains("768"));
        assert!(rows[1].note.is_empty());
    }

    #[test]
    fn clopper_pearson_brackets_the_point_estimate() {
        let (lo, hi) = clopper_pearson(12usize, 1000, 0.95f64);
        assert!(lo < 0.012 && 0.012 < hi);
        assert!(lo > 0.005 && hi < 0.025, "({lo}, {hi})");
        let (lo0, hi0) = clopper_pearson(0usize, 100, 0.95f64);
        assert_eq!(lo0, 0.0);
        // Rule of three: upper ≈ 3.689/n at 97.5%.
        assert!((hi0 - 0.03689).abs() < 2e-3, "hi0 {hi0}");
        let (_, hi_all) = clopper_pearson(100usize, 100, 0.95f64);
        assert_eq!(hi_all, 1.0);
    }
}
