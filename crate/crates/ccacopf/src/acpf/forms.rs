//! Quadratic-form view of the power-flow equations.
//!
//! Every bus injection and directed branch flow is an exact homogeneous
//! quadratic `zᵀ A z` of the voltage entries it touches. The matrices are
//! symmetric and in general indefinite; they are the ground truth the
//! convex surrogate approximates, and the solver's audit oracle.

use crate::grid::{AdmittanceMatrix, NetworkCase};
use crate::scalar::Scalar;
use nalgebra::DMatrix;

/// Symmetric quadratic form over a subset of the full voltage vector.
/// `idx` are the global positions of the local variables, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseQuadForm<T: Scalar> {
    pub idx: Vec<usize>,
    pub a: DMatrix<T>,
}

impl<T: Scalar> SparseQuadForm<T> {
    fn new(idx: Vec<usize>) -> Self {
        let k = idx.len();
        SparseQuadForm { idx, a: DMatrix::zeros(k, k) }
    }

    /// Adds `w·z_i·z_j` keeping the matrix symmetric.
    fn add(&mut self, local_i: usize, local_j: usize, w: T) {
        let half = w / T::c(2.0);
        self.a[(local_i, local_j)] += half;
        self.a[(local_j, local_i)] += half;
    }

    /// Evaluates `zᵀ A z` gathering `z` from the full state vector.
    pub fn eval(&self, x: &[T]) -> T {
        let k = self.idx.len();
        let mut acc = T::zero();
        for r in 0..k {
            let xr = x[self.idx[r]];
            let mut row = T::zero();
            for c in 0..k {
                row += self.a[(r, c)] * x[self.idx[c]];
            }
            acc += xr * row;
        }
        acc
    }

    pub fn eigenvalues(&self) -> Vec<T> {
        self.a.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
    }
}

/// The full set of exact quadratic forms for a case: per-bus P and Q, and
/// per-branch per-direction P and Q (`[forward, reverse]`).
#[derive(Debug, Clone)]
pub struct QuadraticForms<T: Scalar> {
    pub bus_p: Vec<SparseQuadForm<T>>,
    pub bus_q: Vec<SparseQuadForm<T>>,
    pub branch_p: Vec<[SparseQuadForm<T>; 2]>,
    pub branch_q: Vec<[SparseQuadForm<T>; 2]>,
}

/// Voltage-vector positions a bus map may read: the bus itself plus its
/// admittance-row neighbors.
pub(crate) fn bus_feature_indices<T: Scalar>(y: &AdmittanceMatrix<T>, bus: usize) -> Vec<usize> {
    let mut buses = y.neighbors(bus);
    buses.push(bus);
    buses.sort_unstable();
    buses.iter().flat_map(|&b| [2 * b, 2 * b + 1]).collect()
}

pub(crate) fn branch_feature_indices(from: usize, to: usize) -> Vec<usize> {
    vec![2 * from, 2 * from + 1, 2 * to, 2 * to + 1]
}

pub fn assemble_quadratic_forms<T: Scalar>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
) -> QuadraticForms<T> {
    let n = case.n_buses();
    let mut bus_p = Vec::with_capacity(n);
    let mut bus_q = Vec::with_capacity(n);
    for i in 0..n {
        let idx = bus_feature_indices(y, i);
        let local = |g: usize| idx.binary_search(&g).expect("index in support");
        let (lei, lfi) = (local(2 * i), local(2 * i + 1));
        let mut fp = SparseQuadForm::new(idx.clone());
        let mut fq = SparseQuadForm::new(idx.clone());
        for pos in (0..idx.len()).step_by(2) {
            let j = idx[pos] / 2;
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            if g == T::zero() && b == T::zero() {
                continue;
            }
            let (lej, lfj) = (pos, pos + 1);
            // P_i += G_ij·e_i·e_j + B_ij·f_i·e_j − B_ij·e_i·f_j + G_ij·f_i·f_j
            fp.add(lei, lej, g);
            fp.add(lfi, lej, b);
            fp.add(lei, lfj, -b);
            fp.add(lfi, lfj, g);
            // Q_i += G_ij·f_i·e_j − B_ij·f_i·f_j − G_ij·e_i·f_j − B_ij·e_i·e_j
            fq.add(lfi, lej, g);
            fq.add(lfi, lfj, -b);
            fq.add(lei, lfj, -g);
            fq.add(lei, lej, -b);
        }
        bus_p.push(fp);
        bus_q.push(fq);
    }

    let mut branch_p = Vec::with_capacity(case.branches.len());
    let mut branch_q = Vec::with_capacity(case.branches.len());
    for br in &case.branches {
        let d = br.r * br.r + br.x * br.x;
        let gs = br.r / d;
        let bs = -br.x / d;
        let dir = |i: usize, j: usize| -> (SparseQuadForm<T>, SparseQuadForm<T>) {
            let idx = branch_feature_indices(i, j);
            let mut fp = SparseQuadForm::new(idx.clone());
            let mut fq = SparseQuadForm::new(idx);
            // Local order: [e_i, f_i, e_j, f_j].
            fp.add(0, 0, gs);
            fp.add(1, 1, gs);
            fp.add(0, 2, -gs);
            fp.add(1, 3, -gs);
            fp.add(1, 2, -bs);
            fp.add(0, 3, bs);

            fq.add(0, 0, -bs);
            fq.add(1, 1, -bs);
            fq.add(0, 2, bs);
            fq.add(1, 3, bs);
            fq.add(1, 2, -gs);
            fq.add(0, 3, gs);
            (fp, fq)
        };
        let (pf, qf) = dir(br.from, br.to);
        let (pr, qr) = dir(br.to, br.from);
        branch_p.push([pf, pr]);
        branch_q.push([qf, qr]);
    }

    QuadraticForms { bus_p, bus_q, branch_p, branch_q }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acpf::{eval_branch_flows, eval_injections, VoltageState};
    use crate::grid::{build_admittance, parse_case};
    use rand::Rng;

    fn nine_bus() -> NetworkCase<f64> {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/case9.m");
        parse_case(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn forms_match_direct_evaluation_on_random_states() {
        let case = nine_bus();
        let y = build_admittance(&case).unwrap();
        let forms = assemble_quadratic_forms(&case, &y);
        let mut rng = crate::util::stream_rng(11, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.3..1.3)).collect();
            let state = VoltageState { x: x.clone() };
            let (p, q) = eval_injections(&state, &y);
            let (pf, qf) = eval_branch_flows(&state, &case);
            for i in 0..9 {
                assert!((forms.bus_p[i].eval(&x) - p[i]).abs() <= 1e-10, "P bus {i}");
                assert!((forms.bus_q[i].eval(&x) - q[i]).abs() <= 1e-10, "Q bus {i}");
            }
            for k in 0..case.branches.len() {
                for d in 0..2 {
                    assert!(
                        (forms.branch_p[k][d].eval(&x) - pf[2 * k + d]).abs() <= 1e-10,
                        "P branch {k} dir {d}"
                    );
                    assert!(
                        (forms.branch_q[k][d].eval(&x) - qf[2 * k + d]).abs() <= 1e-10,
                        "Q branch {k} dir {d}"
                    );
                }
            }
        }
    }

    #[test]
    fn injection_forms_are_indefinite() {
        // Exact power-flow quadratics have eigenvalues of both signs.
        let case = nine_bus();
        let y = build_admittance(&case).unwrap();
        let forms = assemble_quadratic_forms(&case, &y);
        for i in 0..9 {
            let eig = forms.bus_p[i].eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(min < -1e-9 && max > 1e-9, "bus {i}: [{min}, {max}]");
        }
    }

    #[test]
    fn zero_admittance_gives_zero_forms() {
        let case = nine_bus();
        let n = case.n_buses();
        let y = AdmittanceMatrix {
            g: nalgebra::DMatrix::zeros(n, n),
            b: nalgebra::DMatrix::zeros(n, n),
        };
        let forms = assemble_quadratic_forms(&case, &y);
        let state = VoltageState { x: vec![1.0; 2 * n] };
        for f in &forms.bus_p {
            assert_eq!(f.eval(&state.x), 0.0);
        }
    }
}
