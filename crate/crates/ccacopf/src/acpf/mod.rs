//! Exact AC power flow in rectangular voltage coordinates.
//!
//! The voltage vector is laid out `[e1, f1, e2, f2, …, en, fn]` where
//! `V_i = e_i + j·f_i`. Bus injections and series branch flows are
//! quadratic functions of that vector; [`forms`] materializes them as
//! explicit symmetric (indefinite) matrices, [`newton`] solves the
//! power-flow equations, and [`training`] samples solved states to label
//! surrogate training data.

mod forms;
mod newton;
mod training;

pub use forms::{assemble_quadratic_forms, QuadraticForms, SparseQuadForm};
pub(crate) use forms::{branch_feature_indices, bus_feature_indices};
pub use newton::{newton_pf, pf_jacobian, pf_residual, PfError, PfOptions, PfSolution};
pub use training::{
    apply_draw, envelope_state, generate_training_set, load_training_csv, training_draw,
    DataGenError, FlowSample, TrainingDraw, TrainingMeta, TrainingSet,
};

use crate::grid::{AdmittanceMatrix, NetworkCase};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Coordinate-wise trusted envelope of the voltage state.
///
/// A fitted map is only trustworthy where training data exists. Solved
/// operating points concentrate in a tight region of the 2n-dimensional
/// state space; the envelope is their per-coordinate range, symmetrically
/// widened, and it defines both where coverage samples are drawn and the
/// box the scenario program confines its per-scenario states to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StateEnvelope<T: Scalar> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> StateEnvelope<T> {
    /// Envelope of the given states: per-coordinate range stretched by
    /// `widen` about its midpoint plus an absolute margin.
    pub fn from_states<'a>(
        states: impl Iterator<Item = &'a [T]>,
        dim: usize,
        widen: T,
        margin: T,
    ) -> Self {
        let mut lo = vec![T::c(f64::INFINITY); dim];
        let mut hi = vec![T::c(f64::NEG_INFINITY); dim];
        for x in states {
            for k in 0..dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        for k in 0..dim {
            let mid = (lo[k] + hi[k]) / T::c(2.0);
            let half = (hi[k] - lo[k]) / T::c(2.0) * widen + margin;
            lo[k] = mid - half;
            hi[k] = mid + half;
        }
        StateEnvelope { lo, hi }
    }

    pub fn midpoint(&self) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| (l + h) / T::c(2.0)).collect()
    }
}

/// Rectangular voltage state, `x[2i] = e_i`, `x[2i+1] = f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VoltageState<T: Scalar> {
    pub x: Vec<T>,
}

impl<T: Scalar> VoltageState<T> {
    pub fn flat(n: usize) -> Self {
        let mut x = vec![T::zero(); 2 * n];
        for i in 0..n {
            x[2 * i] = T::one();
        }
        VoltageState { x }
    }

    pub fn n_buses(&self) -> usize {
        self.x.len() / 2
    }

    #[inline]
    pub fn e(&self, bus: usize) -> T {
        self.x[2 * bus]
    }

    #[inline]
    pub fn f(&self, bus: usize) -> T {
        self.x[2 * bus + 1]
    }

    pub fn magnitude(&self, bus: usize) -> T {
        (self.e(bus) * self.e(bus) + self.f(bus) * self.f(bus)).sqrt()
    }
}

/// Net complex bus injections implied by a voltage state:
///
/// ```text
/// P_i = e_i·Re(I_i) + f_i·Im(I_i)
/// Q_i = f_i·Re(I_i) − e_i·Im(I_i)      I = Y·V
/// ```
pub fn eval_injections<T: Scalar>(
    state: &VoltageState<T>,
    y: &AdmittanceMatrix<T>,
) -> (Vec<T>, Vec<T>) {
    let n = y.n();
    assert_eq!(state.x.len(), 2 * n, "state/admittance dimensions");
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    for i in 0..n {
        let mut ire = T::zero();
        let mut iim = T::zero();
        for j in 0..n {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g == T::zero() && b == T::zero() {
                continue;
            }
            ire += g * state.e(j) - b * state.f(j);
            iim += g * state.f(j) + b * state.e(j);
        }
        p[i] = state.e(i) * ire + state.f(i) * iim;
        q[i] = state.f(i) * ire - state.e(i) * iim;
    }
    (p, q)
}

/// Series branch flows, two directed entries per branch
/// (`[br0 i→j, br0 j→i, br1 i→j, …]`). Line-charging injections are shunt
/// terms and are accounted on the bus side, not here.
pub fn eval_branch_flows<T: Scalar>(
    state: &VoltageState<T>,
    case: &NetworkCase<T>,
) -> (Vec<T>, Vec<T>) {
    let nbr = case.branches.len();
    let mut p = vec![T::zero(); 2 * nbr];
    let mut q = vec![T::zero(); 2 * nbr];
    for (k, br) in case.branches.iter().enumerate() {
        let d = br.r * br.r + br.x * br.x;
        let gs = br.r / d;
        let bs = -br.x / d;
        let dir = |i: usize, j: usize| -> (T, T) {
            let (ei, fi, ej, fj) = (state.e(i), state.f(i), state.e(j), state.f(j));
            let vi2 = ei * ei + fi * fi;
            let dot = ei * ej + fi * fj;
            let cross = fi * ej - ei * fj;
            let pf = gs * (vi2 - dot) - bs * cross;
            let qf = -bs * (vi2 - dot) - gs * cross;
            (pf, qf)
        };
        let (pf, qf) = dir(br.from, br.to);
        let (pr, qr) = dir(br.to, br.from);
        p[2 * k] = pf;
        p[2 * k + 1] = pr;
        q[2 * k] = qf;
        q[2 * k + 1] = qr;
    }
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_admittance, parse_case};
    use approx::assert_abs_diff_eq;

    fn two_bus(r: f64, x: f64, b_sh: f64) -> NetworkCase<f64> {
        let text = format!(
            "function mpc = t\nmpc.baseMVA = 100;\n\
             mpc.bus = [\n1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n2 1 10 0 0 0 1 1 0 230 1 1.1 0.9;\n];\n\
             mpc.gen = [\n1 0 0 50 -50 1.0 100 1 100 0;\n];\n\
             mpc.branch = [\n1 2 {r} {x} {b_sh} 0 0 0 0 0 1 -360 360;\n];\n\
             mpc.gencost = [\n2 0 0 2 10 0;\n];\n"
        );
        parse_case(&text).unwrap()
    }

    #[test]
    fn flat_voltage_with_zero_shunts_gives_zero_injections() {
        let case = two_bus(0.0, 0.1, 0.0);
        let y = build_admittance(&case).unwrap();
        let state = VoltageState::<f64>::flat(2);
        let (p, q) = eval_injections(&state, &y);
        for i in 0..2 {
            assert_abs_diff_eq!(p[i], 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(q[i], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn injections_scale_quadratically_with_state() {
        let case = two_bus(0.02, 0.1, 0.04);
        let y = build_admittance(&case).unwrap();
        let state = VoltageState { x: vec![1.0, 0.0, 0.98, -0.05] };
        let scaled = VoltageState { x: state.x.iter().map(|v| 1.7 * v).collect() };
        let (p1, q1) = eval_injections(&state, &y);
        let (p2, q2) = eval_injections(&scaled, &y);
        for i in 0..2 {
            assert_abs_diff_eq!(p2[i], 1.7 * 1.7 * p1[i], epsilon = 1e-12);
            assert_abs_diff_eq!(q2[i], 1.7 * 1.7 * q1[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_end_voltages_no_charging_carry_no_flow() {
        let case = two_bus(0.02, 0.1, 0.0);
        let state = VoltageState { x: vec![0.97, 0.12, 0.97, 0.12] };
        let (p, q) = eval_branch_flows(&state, &case);
        for v in p.iter().chain(q.iter()) {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn lossless_line_flows_balance() {
        let case = two_bus(0.0, 0.1, 0.0);
        let state = VoltageState { x: vec![1.0, 0.0, 0.98, -0.05] };
        let (p, _) = eval_branch_flows(&state, &case);
        assert_abs_diff_eq!(p[0] + p[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn resistive_line_loses_power_on_random_states() {
        let case = two_bus(0.03, 0.1, 0.05);
        let mut rng = crate::util::stream_rng(9, 0, 0);
        use rand::Rng;
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let state = VoltageState { x };
            let (p, _) = eval_branch_flows(&state, &case);
            assert!(p[0] + p[1] >= -1e-12, "loss must be nonnegative");
        }
    }
}
