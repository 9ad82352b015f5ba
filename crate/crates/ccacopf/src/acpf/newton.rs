//! Newton power-flow solver in rectangular coordinates.
//!
//! Bus equation set (all residuals driven to ≤ tol in ∞-norm):
//!
//! * slack: `e = vset`, `f = 0`;
//! * generator (PV): `P_i(x) = Σ pg_scheduled − p_net`, `e² + f² = vset²`;
//! * load (PQ): `P_i(x) = −p_net`, `Q_i(x) = −q_net`.
//!
//! Generator reactive limits are not enforced here (no PV→PQ switching);
//! the optimizer applies them later as box constraints.

use super::VoltageState;
use crate::grid::{AdmittanceMatrix, BusKind, NetworkCase};
use crate::scalar::Scalar;
use crate::scenario::Scenario;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfError {
    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions<T: Scalar> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for PfOptions<T> {
    fn default() -> Self {
        PfOptions { tol: T::c(1e-8), max_iter: 30 }
    }
}

#[derive(Debug, Clone)]
pub struct PfSolution<T: Scalar> {
    pub state: VoltageState<T>,
    pub iterations: usize,
    pub residual: T,
}

fn scheduled_generation<T: Scalar>(case: &NetworkCase<T>) -> Vec<T> {
    let mut pg_bus = vec![T::zero(); case.n_buses()];
    for g in &case.generators {
        pg_bus[g.bus] += g.pg;
    }
    pg_bus
}

fn bus_currents<T: Scalar>(y: &AdmittanceMatrix<T>, x: &[T]) -> (Vec<T>, Vec<T>) {
    let n = y.n();
    let mut ire = vec![T::zero(); n];
    let mut iim = vec![T::zero(); n];
    for i in 0..n {
        for j in 0..n {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g == T::zero() && b == T::zero() {
                continue;
            }
            ire[i] += g * x[2 * j] - b * x[2 * j + 1];
            iim[i] += g * x[2 * j + 1] + b * x[2 * j];
        }
    }
    (ire, iim)
}

/// Residual vector of the power-flow equation set at `x`.
pub fn pf_residual<T: Scalar>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    scenario: &Scenario<T>,
    x: &[T],
) -> Vec<T> {
    let pg_bus = scheduled_generation(case);
    let (ire, iim) = bus_currents(y, x);
    let mut f = vec![T::zero(); x.len()];
    for bus in &case.buses {
        let i = bus.id;
        let (e, fi) = (x[2 * i], x[2 * i + 1]);
        let p = e * ire[i] + fi * iim[i];
        let q = fi * ire[i] - e * iim[i];
        match bus.kind {
            BusKind::Slack => {
                f[2 * i] = e - bus.vset;
                f[2 * i + 1] = fi;
            }
            BusKind::Generator => {
                f[2 * i] = p - (pg_bus[i] - scenario.p_net[i]);
                f[2 * i + 1] = (e * e + fi * fi) - bus.vset * bus.vset;
            }
            BusKind::Load => {
                f[2 * i] = p + scenario.p_net[i];
                f[2 * i + 1] = q + scenario.q_net[i];
            }
        }
    }
    f
}

/// Analytic Jacobian of [`pf_residual`] with respect to `x`.
pub fn pf_jacobian<T: Scalar>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    x: &[T],
) -> DMatrix<T> {
    let n = case.n_buses();
    let (ire, iim) = bus_currents(y, x);
    let mut jac = DMatrix::<T>::zeros(2 * n, 2 * n);
    for bus in &case.buses {
        let i = bus.id;
        let (e, fi) = (x[2 * i], x[2 * i + 1]);
        match bus.kind {
            BusKind::Slack => {
                jac[(2 * i, 2 * i)] = T::one();
                jac[(2 * i + 1, 2 * i + 1)] = T::one();
            }
            _ => {
                for j in 0..n {
                    let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
                    if g == T::zero() && b == T::zero() && i != j {
                        continue;
                    }
                    let mut dp_de = e * g + fi * b;
                    let mut dp_df = -e * b + fi * g;
                    if i == j {
                        dp_de += ire[i];
                        dp_df += iim[i];
                    }
                    jac[(2 * i, 2 * j)] = dp_de;
                    jac[(2 * i, 2 * j + 1)] = dp_df;
                    if bus.kind == BusKind::Generator {
                        if i == j {
                            jac[(2 * i + 1, 2 * j)] = T::c(2.0) * e;
                            jac[(2 * i + 1, 2 * j + 1)] = T::c(2.0) * fi;
                        }
                    } else {
                        let mut dq_de = fi * g - e * b;
                        let mut dq_df = -fi * b - e * g;
                        if i == j {
                            dq_de -= iim[i];
                            dq_df += ire[i];
                        }
                        jac[(2 * i + 1, 2 * j)] = dq_de;
                        jac[(2 * i + 1, 2 * j + 1)] = dq_df;
                    }
                }
            }
        }
    }
    jac
}

/// Solves the power-flow equations for one net-load scenario.
pub fn newton_pf<T: Scalar>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    scenario: &Scenario<T>,
    opts: PfOptions<T>,
) -> Result<PfSolution<T>, PfError> {
    let n = case.n_buses();
    assert_eq!(scenario.p_net.len(), n, "scenario dimension");

    let mut x = vec![T::zero(); 2 * n];
    for bus in &case.buses {
        x[2 * bus.id] = match bus.kind {
            BusKind::Load => T::one(),
            _ => bus.vset,
        };
    }

    let inf_norm = |f: &[T]| f.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let mut f = pf_residual(case, y, scenario, &x);
    let mut residual = inf_norm(&f);

    for iteration in 0..=opts.max_iter {
        if residual <= opts.tol {
            return Ok(PfSolution { state: VoltageState { x }, iterations: iteration, residual });
        }
        if iteration == opts.max_iter || !residual.is_finite() || residual > T::c(1e12) {
            return Err(PfError::NonConvergence {
                iterations: iteration,
                residual: residual.as_f64(),
            });
        }

        let jac = pf_jacobian(case, y, &x);
        let rhs = DVector::from_column_slice(&f);
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(PfError::SingularJacobian { iteration });
        };
        for k in 0..2 * n {
            x[k] -= step[k];
        }
        f = pf_residual(case, y, scenario, &x);
        residual = inf_norm(&f);
    }
    unreachable!("loop returns or errors");
}
