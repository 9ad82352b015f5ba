//! Block-structured convex QCQP container.
//!
//! Variables split into a shared vector `u` (generator setpoints, the
//! epigraph variable, possibly a phase-I slack) and one local vector `w_s`
//! per scenario (voltage entries and flow variables). Every constraint is
//! convex quadratic:
//!
//! ```text
//! g(u, w_s) = r + shift_s + lin_u·u + lin_w·w_s + uᵀQ_u u + w_sᵀQ_w w_s ≤ 0
//! ```
//!
//! Per-scenario constraints share one template, differing only in the
//! per-scenario constant `shift_s` (the sampled net loads). There are no
//! u–w cross-quadratic terms, which keeps the Newton system block-arrow.

use crate::scalar::Scalar;
use nalgebra::DMatrix;

/// Quadratic term `zᵀ a z` over the variable subset `idx`.
#[derive(Debug, Clone)]
pub struct QuadBlock<T: Scalar> {
    pub idx: Vec<usize>,
    pub a: DMatrix<T>,
}

impl<T: Scalar> QuadBlock<T> {
    pub fn eval(&self, v: &[T]) -> T {
        let k = self.idx.len();
        let mut acc = T::zero();
        for r in 0..k {
            let mut row = T::zero();
            for c in 0..k {
                row += self.a[(r, c)] * v[self.idx[c]];
            }
            acc += v[self.idx[r]] * row;
        }
        acc
    }

    /// Adds `2·a·z` into the dense gradient buffer.
    pub fn add_grad(&self, v: &[T], out: &mut [T]) {
        let k = self.idx.len();
        for r in 0..k {
            let mut acc = T::zero();
            for c in 0..k {
                acc += self.a[(r, c)] * v[self.idx[c]];
            }
            out[self.idx[r]] += T::c(2.0) * acc;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Constraint<T: Scalar> {
    pub r: T,
    pub lin_u: Vec<(usize, T)>,
    pub lin_w: Vec<(usize, T)>,
    pub quad_u: Option<QuadBlock<T>>,
    pub quad_w: Option<QuadBlock<T>>,
    /// Sorted union of the u / w variables this constraint touches.
    pub support_u: Vec<usize>,
    pub support_w: Vec<usize>,
}

impl<T: Scalar> Constraint<T> {
    pub fn new(
        r: T,
        lin_u: Vec<(usize, T)>,
        lin_w: Vec<(usize, T)>,
        quad_u: Option<QuadBlock<T>>,
        quad_w: Option<QuadBlock<T>>,
    ) -> Self {
        let mut support_u: Vec<usize> = lin_u.iter().map(|&(i, _)| i).collect();
        if let Some(q) = &quad_u {
            support_u.extend(&q.idx);
        }
        support_u.sort_unstable();
        support_u.dedup();
        let mut support_w: Vec<usize> = lin_w.iter().map(|&(i, _)| i).collect();
        if let Some(q) = &quad_w {
            support_w.extend(&q.idx);
        }
        support_w.sort_unstable();
        support_w.dedup();
        Constraint { r, lin_u, lin_w, quad_u, quad_w, support_u, support_w }
    }

    /// Constraint value; `w` may be empty for shared constraints.
    pub fn eval(&self, u: &[T], w: &[T]) -> T {
        let mut g = self.r;
        for &(i, c) in &self.lin_u {
            g += c * u[i];
        }
        for &(i, c) in &self.lin_w {
            g += c * w[i];
        }
        if let Some(q) = &self.quad_u {
            g += q.eval(u);
        }
        if let Some(q) = &self.quad_w {
            g += q.eval(w);
        }
        g
    }

    /// Dense gradients into caller buffers (not zeroed here).
    pub fn add_grad(&self, u: &[T], w: &[T], gu: &mut [T], gw: &mut [T]) {
        for &(i, c) in &self.lin_u {
            gu[i] += c;
        }
        for &(i, c) in &self.lin_w {
            gw[i] += c;
        }
        if let Some(q) = &self.quad_u {
            q.add_grad(u, gu);
        }
        if let Some(q) = &self.quad_w {
            q.add_grad(w, gw);
        }
    }

    /// Folds fixed shared variables into the constant term, producing a
    /// scenario-local constraint (used by feasibility subproblems).
    pub fn fix_u(&self, u: &[T]) -> Constraint<T> {
        let mut r = self.r;
        for &(i, c) in &self.lin_u {
            r += c * u[i];
        }
        if let Some(q) = &self.quad_u {
            r += q.eval(u);
        }
        Constraint::new(r, Vec::new(), self.lin_w.clone(), None, self.quad_w.clone())
    }
}

/// Primal iterate: shared variables plus one local vector per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Point<T: Scalar> {
    pub u: Vec<T>,
    pub w: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct BlockQcqp<T: Scalar> {
    pub u_dim: usize,
    pub w_dim: usize,
    pub n_scen: usize,
    /// Linear objective over `u` (minimized).
    pub objective: Vec<T>,
    pub shared: Vec<Constraint<T>>,
    pub template: Vec<Constraint<T>>,
    /// `shift[s][k]` is added to `template[k]` for scenario `s`.
    pub shift: Vec<Vec<T>>,
}

impl<T: Scalar> BlockQcqp<T> {
    pub fn n_constraints(&self) -> usize {
        self.shared.len() + self.n_scen * self.template.len()
    }

    pub fn n_vars(&self) -> usize {
        self.u_dim + self.n_scen * self.w_dim
    }

    pub fn objective_value(&self, p: &Point<T>) -> T {
        self.objective.iter().zip(&p.u).map(|(c, u)| *c * *u).sum()
    }

    pub fn scen_constraint(&self, s: usize, k: usize, p: &Point<T>) -> T {
        self.template[k].eval(&p.u, &p.w[s]) + self.shift[s][k]
    }

    /// Largest constraint value over the whole program (≤ 0 ⇒ feasible).
    pub fn max_violation(&self, p: &Point<T>) -> T {
        let mut m = T::c(f64::NEG_INFINITY);
        for c in &self.shared {
            m = m.max(c.eval(&p.u, &[]));
        }
        for s in 0..self.n_scen {
            for k in 0..self.template.len() {
                m = m.max(self.scen_constraint(s, k, p));
            }
        }
        m
    }

    /// Phase-I relaxation: appends a slack variable `s` to `u`, bounds
    /// every constraint by it (`g − s ≤ 0`), and minimizes `s`.
    pub fn phase1(&self) -> BlockQcqp<T> {
        let s_idx = self.u_dim;
        let relax = |c: &Constraint<T>| {
            let mut lin_u = c.lin_u.clone();
            lin_u.push((s_idx, -T::one()));
            Constraint::new(c.r, lin_u, c.lin_w.clone(), c.quad_u.clone(), c.quad_w.clone())
        };
        let mut objective = vec![T::zero(); self.u_dim + 1];
        objective[s_idx] = T::one();
        BlockQcqp {
            u_dim: self.u_dim + 1,
            w_dim: self.w_dim,
            n_scen: self.n_scen,
            objective,
            shared: self.shared.iter().map(relax).collect(),
            template: self.template.iter().map(relax).collect(),
            shift: self.shift.clone(),
        }
    }

    /// Scenario-local feasibility subproblem: fixes `u`, keeps only the
    /// per-scenario constraints of scenario `s`.
    pub fn fix_dispatch(&self, u: &[T], s: usize) -> BlockQcqp<T> {
        BlockQcqp {
            u_dim: 0,
            w_dim: self.w_dim,
            n_scen: 1,
            objective: Vec::new(),
            shared: Vec::new(),
            template: self.template.iter().map(|c| c.fix_u(u)).collect(),
            shift: vec![self.shift[s].clone()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (BlockQcqp<f64>, Point<f64>) {
        // u = [p], w_s = [x]; constraints: p ≤ 1, x² − p ≤ 0 per scenario.
        let box_c = Constraint::new(-1.0, vec![(0, 1.0)], vec![], None, None);
        let quad = Constraint::new(
            0.0,
            vec![(0, -1.0)],
            vec![],
            None,
            Some(QuadBlock { idx: vec![0], a: DMatrix::from_row_slice(1, 1, &[1.0]) }),
        );
        let q = BlockQcqp {
            u_dim: 1,
            w_dim: 1,
            n_scen: 2,
            objective: vec![1.0],
            shared: vec![box_c],
            template: vec![quad],
            shift: vec![vec![0.1], vec![-0.2]],
        };
        let p = Point { u: vec![0.5], w: vec![vec![0.3], vec![0.6]] };
        (q, p)
    }

    #[test]
    fn evaluation_and_counts() {
        let (q, p) = toy();
        assert_eq!(q.n_constraints(), 1 + 2);
        assert_eq!(q.n_vars(), 3);
        assert!((q.scen_constraint(0, 0, &p) - (0.09 - 0.5 + 0.1)).abs() < 1e-15);
        assert!((q.scen_constraint(1, 0, &p) - (0.36 - 0.5 - 0.2)).abs() < 1e-15);
        assert!((q.max_violation(&p) - -0.31).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (q, p) = toy();
        let c = &q.template[0];
        let mut gu = vec![0.0; 1];
        let mut gw = vec![0.0; 1];
        c.add_grad(&p.u, &p.w[0], &mut gu, &mut gw);
        let h = 1e-7;
        let base = c.eval(&p.u, &p.w[0]);
        let up = c.eval(&[p.u[0] + h], &p.w[0]);
        let wp = c.eval(&p.u, &[p.w[0][0] + h]);
        assert!((gu[0] - (up - base) / h).abs() < 1e-6);
        assert!((gw[0] - (wp - base) / h).abs() < 1e-6);
    }

    #[test]
    fn phase1_relaxes_every_constraint() {
        let (q, p) = toy();
        let ph1 = q.phase1();
        let with_slack = Point { u: vec![p.u[0], 5.0], w: p.w.clone() };
        assert!(ph1.max_violation(&with_slack) < 0.0);
        assert_eq!(ph1.objective, vec![0.0, 1.0]);
    }

    #[test]
    fn fix_dispatch_folds_shared_terms() {
        let (q, p) = toy();
        let sub = q.fix_dispatch(&p.u, 1);
        assert_eq!(sub.u_dim, 0);
        assert_eq!(sub.n_scen, 1);
        let local = Point { u: vec![], w: vec![p.w[1].clone()] };
        assert!((sub.scen_constraint(0, 0, &local) - q.scen_constraint(1, 0, &p)).abs() < 1e-15);
    }
}
