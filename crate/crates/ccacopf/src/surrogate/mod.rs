//! Learned convex quadratic approximation of the power-flow maps.
//!
//! Each constrained quantity (bus P/Q injection, directed branch P/Q flow)
//! gets its own map `z ↦ zᵀA z + bᵀz + c` with `A ⪰ 0`, fitted by boosted
//! least-squares regression whose base learner is an unconstrained
//! quadratic fit followed by eigenvalue clipping onto the PSD cone. A sum
//! of PSD quadratics is again a PSD quadratic, so the boosted ensemble
//! collapses into a single map per target.

mod fit;

pub use fit::{fit_base_learner, fit_boosted, train_all, RoundStats, TrainingReport};

use crate::scalar::Scalar;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("ill-posed fit{}: rank-deficient design with no ridge", target_suffix(.0))]
    IllPosedFit(Option<String>),
    #[error("training diverged for {target} at round {round}")]
    Diverged { target: String, round: usize },
    #[error("model schema error: {0}")]
    Schema(String),
    #[error("map for {target} violates convexity: min eigenvalue {min_eig:.3e}")]
    PsdViolation { target: String, min_eig: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn target_suffix(t: &Option<String>) -> String {
    t.as_ref().map(|s| format!(" for {s}")).unwrap_or_default()
}

/// Tolerances that define "numerically PSD" and "numerically symmetric"
/// for stored maps.
pub const PSD_TOL: f64 = 1e-8;
pub const SYM_TOL: f64 = 1e-12;

/// Convex quadratic map over a subset of the voltage vector.
///
/// `features` lists the global positions this map reads; `a` is the k×k
/// symmetric PSD quadratic coefficient matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QuadraticMap<T: Scalar> {
    pub features: Vec<usize>,
    pub a: Vec<T>,
    pub b: Vec<T>,
    pub c: T,
}

impl<T: Scalar> QuadraticMap<T> {
    pub fn zero(features: Vec<usize>) -> Self {
        let k = features.len();
        QuadraticMap { features, a: vec![T::zero(); k * k], b: vec![T::zero(); k], c: T::zero() }
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    /// Evaluates the map on local feature values `z` (length k).
    pub fn eval_features(&self, z: &[T]) -> T {
        let k = self.k();
        let mut acc = self.c;
        for r in 0..k {
            let mut row = T::zero();
            for cix in 0..k {
                row += self.a[r * k + cix] * z[cix];
            }
            acc += z[r] * (row + self.b[r]);
        }
        acc
    }

    /// Evaluates the map gathering features from the full state vector.
    pub fn eval(&self, x_full: &[T]) -> T {
        let k = self.k();
        let mut z = vec![T::zero(); k];
        for (loc, &g) in self.features.iter().enumerate() {
            z[loc] = x_full[g];
        }
        self.eval_features(&z)
    }

    /// Gradient with respect to the local features: `2Az + b`.
    pub fn grad_features(&self, z: &[T], out: &mut [T]) {
        let k = self.k();
        for r in 0..k {
            let mut acc = self.b[r];
            for cix in 0..k {
                acc += T::c(2.0) * self.a[r * k + cix] * z[cix];
            }
            out[r] = acc;
        }
    }

    pub fn a_matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.k(), self.k(), &self.a)
    }

    pub fn min_eigenvalue(&self) -> T {
        if self.k() == 0 {
            return T::zero();
        }
        self.a_matrix()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(T::c(f64::INFINITY), |m, v| m.min(v))
    }

    /// Checks the stored-map invariants: shape, symmetry, convexity.
    pub fn validate(&self, target: &str) -> Result<(), TrainError> {
        let k = self.k();
        if self.a.len() != k * k || self.b.len() != k {
            return Err(TrainError::Schema(format!(
                "{target}: coefficient shapes do not match {k} features"
            )));
        }
        for r in 0..k {
            for cix in 0..r {
                let gap = (self.a[r * k + cix] - self.a[cix * k + r]).abs();
                if gap > T::c(SYM_TOL) {
                    return Err(TrainError::Schema(format!(
                        "{target}: quadratic matrix asymmetric by {gap}"
                    )));
                }
            }
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < T::c(-PSD_TOL) {
            return Err(TrainError::PsdViolation {
                target: target.to_string(),
                min_eig: min_eig.as_f64(),
            });
        }
        Ok(())
    }
}

/// Identity of a fitted target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetId {
    BusP { bus: usize },
    BusQ { bus: usize },
    BranchP { branch: usize, reverse: bool },
    BranchQ { branch: usize, reverse: bool },
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetId::BusP { bus } => write!(f, "bus_p[{bus}]"),
            TargetId::BusQ { bus } => write!(f, "bus_q[{bus}]"),
            TargetId::BranchP { branch, reverse } => {
                write!(f, "branch_p[{branch}]{}", if *reverse { "_rev" } else { "_fwd" })
            }
            TargetId::BranchQ { branch, reverse } => {
                write!(f, "branch_q[{branch}]{}", if *reverse { "_rev" } else { "_fwd" })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitStats<T: Scalar> {
    pub rounds_used: usize,
    pub train_rmse: T,
    pub val_rmse: T,
    /// Holdout RMSE divided by the target's observed range.
    pub val_rel_rmse: T,
    pub target_range: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedMap<T: Scalar> {
    pub target: TargetId,
    pub map: QuadraticMap<T>,
    pub stats: FitStats<T>,
}

/// Boosting configuration. Scalar knobs are plain `f64` so configs remain
/// serializable independently of the model's scalar type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub learn_rate: f64,
    pub ridge: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// Closed-form step-size line search instead of the constant rate.
    pub line_search: bool,
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            rounds: 50,
            learn_rate: 0.5,
            ridge: 1e-8,
            val_fraction: 0.2,
            seed: 0,
            line_search: false,
            patience: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.rounds < 1 {
            return Err(TrainError::Schema("rounds must be ≥ 1".into()));
        }
        if !(self.learn_rate > 0.0 && self.learn_rate <= 1.0) {
            return Err(TrainError::Schema("learn_rate must lie in (0, 1]".into()));
        }
        if self.ridge < 0.0 {
            return Err(TrainError::Schema("ridge must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainError::Schema("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SurrogateModel<T: Scalar> {
    pub schema: u32,
    pub case_fingerprint: String,
    pub dataset_fingerprint: String,
    pub config: TrainingConfig,
    /// Trusted state envelope inherited from the training set; the
    /// scenario program confines per-scenario states to this box.
    pub state_lo: Vec<T>,
    pub state_hi: Vec<T>,
    pub bus_p: Vec<TrainedMap<T>>,
    pub bus_q: Vec<TrainedMap<T>>,
    /// Per branch: `[forward, reverse]` directed maps.
    pub branch_p: Vec<[TrainedMap<T>; 2]>,
    pub branch_q: Vec<[TrainedMap<T>; 2]>,
}

pub const MODEL_SCHEMA: u32 = 1;

impl<T: Scalar> SurrogateModel<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.schema != MODEL_SCHEMA {
            return Err(TrainError::Schema(format!(
                "unsupported model schema {} (expected {MODEL_SCHEMA})",
                self.schema
            )));
        }
        if self.bus_p.len() != self.bus_q.len() || self.branch_p.len() != self.branch_q.len() {
            return Err(TrainError::Schema("mismatched map counts".into()));
        }
        if self.state_lo.len() != 2 * self.bus_p.len()
            || self.state_hi.len() != self.state_lo.len()
            || self.state_lo.iter().zip(&self.state_hi).any(|(l, h)| !(l < h))
        {
            return Err(TrainError::Schema("invalid state envelope".into()));
        }
        for tm in self.all_maps() {
            tm.map.validate(&tm.target.to_string())?;
        }
        Ok(())
    }

    pub fn all_maps(&self) -> impl Iterator<Item = &TrainedMap<T>> {
        self.bus_p
            .iter()
            .chain(self.bus_q.iter())
            .chain(self.branch_p.iter().flatten())
            .chain(self.branch_q.iter().flatten())
    }

    /// Canonical pretty JSON with a trailing newline; floats use shortest
    /// round-trip encoding, so save → load → save is byte-identical.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let model: SurrogateModel<T> = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn fingerprint(&self) -> String {
        crate::util::fingerprint(self.to_json_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> QuadraticMap<f64> {
        QuadraticMap {
            features: vec![0, 3],
            a: vec![2.0, 0.5, 0.5, 1.0],
            b: vec![0.1, -0.2],
            c: 3.0,
        }
    }

    #[test]
    fn eval_matches_hand_expansion() {
        let m = sample_map();
        let x = [1.0, 9.0, 9.0, 2.0];
        // z = [1, 2]: zᵀAz = 2 + 2·0.5·2 + 4 = 8; bᵀz = 0.1 − 0.4; c = 3.
        assert!((m.eval(&x) - (8.0 + -0.3 + 3.0)).abs() < 1e-14);
    }

    #[test]
    fn negative_definite_map_fails_validation() {
        let mut m = sample_map();
        m.a = vec![-1.0, 0.0, 0.0, -2.0];
        match m.validate("t") {
            Err(TrainError::PsdViolation { .. }) => {}
            other => panic!("expected PSD violation, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_map_fails_validation() {
        let mut m = sample_map();
        m.a[1] += 1e-6;
        assert!(matches!(m.validate("t"), Err(TrainError::Schema(_))));
    }

    #[test]
    fn convexity_holds_at_midpoints() {
        let m = sample_map();
        let mut rng = crate::util::stream_rng(3, 0, 0);
        use rand::Rng;
        for _ in 0..200 {
            let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mid: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = m.eval_features(&mid);
            let rhs = 0.5 * (m.eval_features(&u) + m.eval_features(&v));
            assert!(lhs <= rhs + 1e-9);
        }
    }
}
