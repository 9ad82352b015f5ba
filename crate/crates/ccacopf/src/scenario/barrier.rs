//! Log-barrier interior-point solver for [`BlockQcqp`].
//!
//! Phase I minimizes a shared slack `s` over `g_k − s ≤ 0` until a
//! strictly feasible point appears (or a positive lower bound on `s`
//! certifies infeasibility). Phase II follows the central path of
//!
//! ```text
//! minimize  t·(cᵀu) − Σ_k ln(−g_k)
//! ```
//!
//! with Newton steps. The Hessian is block-arrow — scenario blocks couple
//! only through the shared variables — so each step factorizes the
//! per-scenario blocks independently and solves the small Schur complement
//! on the shared block. Scenario work runs in parallel; all reductions sum
//! in scenario order, so results do not depend on the worker count.

use super::qcqp::{BlockQcqp, Point};
use crate::scalar::Scalar;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("program is infeasible (slack lower bound {margin:.3e})")]
    Infeasible { margin: f64 },
    #[error("iteration limit reached during {0}")]
    MaxIterations(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("program construction: {0}")]
    Build(String),
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions<T: Scalar> {
    /// Target duality gap (constraint count / barrier parameter).
    pub tol: T,
    pub t0: T,
    pub mu: T,
    /// Newton decrement (λ²/2) at which an iterate counts as centered.
    pub center_tol: T,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
    /// Phase I stops as soon as every constraint clears this margin.
    pub feas_exit: T,
    /// Residual level counted as "feasible" by feasibility checks.
    pub feas_tol: T,
}

impl<T: Scalar> Default for BarrierOptions<T> {
    fn default() -> Self {
        BarrierOptions {
            tol: T::c(1e-6),
            t0: T::one(),
            mu: T::c(20.0),
            center_tol: T::c(1e-7),
            max_newton_per_stage: 80,
            max_stages: 60,
            feas_exit: T::c(1e-7),
            feas_tol: T::c(1e-8),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BarrierStats {
    pub newton_iters: usize,
    pub stages: usize,
    /// m/t at exit: bound on the duality gap in objective units.
    pub final_gap: f64,
    /// Newton decrement λ² at the last centering exit.
    pub final_decrement: f64,
}

/// Back-substitution data kept per scenario between the two passes of a
/// Newton step.
struct ScenBack<T: Scalar> {
    dinv_c: DMatrix<T>,
    dinv_r: DVector<T>,
    rw: DVector<T>,
}

fn chol_with_jitter<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>, SolveError> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (0..n).fold(T::one(), |acc, i| acc.max(m[(i, i)].abs()));
    let mut jitter = T::c(1e-12) * scale;
    for _ in 0..8 {
        let mut jm = m.clone();
        for i in 0..n {
            jm[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(jm) {
            return Ok(c);
        }
        jitter *= T::c(100.0);
    }
    Err(SolveError::Numerical(format!("{what} block is not positive definite")))
}

/// Barrier function value, or `None` when the point is not strictly
/// feasible. Deterministic summation order.
fn barrier_value<T: Scalar>(q: &BlockQcqp<T>, p: &Point<T>, t: T) -> Option<T> {
    let mut phi = T::zero();
    for c in &q.shared {
        let slack = -c.eval(&p.u, &[]);
        if slack <= T::zero() {
            return None;
        }
        phi -= slack.ln();
    }
    let per_scen: Vec<Option<T>> = (0..q.n_scen)
        .into_par_iter()
        .map(|s| {
            let mut acc = T::zero();
            for k in 0..q.template.len() {
                let slack = -q.scen_constraint(s, k, p);
                if slack <= T::zero() {
                    return None;
                }
                acc -= slack.ln();
            }
            Some(acc)
        })
        .collect();
    for v in per_scen {
        phi += v?;
    }
    Some(t * q.objective_value(p) + phi)
}

struct NewtonStep<T: Scalar> {
    du: DVector<T>,
    dw: Vec<DVector<T>>,
    lambda2: T,
}

fn newton_direction<T: Scalar>(
    q: &BlockQcqp<T>,
    p: &Point<T>,
    t: T,
) -> Result<NewtonStep<T>, SolveError> {
    let (udim, wdim) = (q.u_dim, q.w_dim);

    // Shared block: objective gradient plus shared-constraint terms.
    let mut e_shared = DMatrix::<T>::zeros(udim, udim);
    let mut ru_total = DVector::<T>::zeros(udim);
    for (i, &c) in q.objective.iter().enumerate() {
        ru_total[i] -= t * c;
    }
    let mut gu_dense = vec![T::zero(); udim];
    for c in &q.shared {
        let g = c.eval(&p.u, &[]);
        let slack = -g;
        if slack <= T::zero() {
            return Err(SolveError::Numerical("iterate left the interior".into()));
        }
        let inv = T::one() / slack;
        let inv2 = inv * inv;
        c.add_grad(&p.u, &[], &mut gu_dense, &mut []);
        for &a in &c.support_u {
            let va = gu_dense[a];
            ru_total[a] -= inv * va;
            for &b in &c.support_u {
                e_shared[(a, b)] += inv2 * va * gu_dense[b];
            }
        }
        if let Some(qu) = &c.quad_u {
            let k = qu.idx.len();
            for r in 0..k {
                for cc in 0..k {
                    e_shared[(qu.idx[r], qu.idx[cc])] += T::c(2.0) * inv * qu.a[(r, cc)];
                }
            }
        }
        for &a in &c.support_u {
            gu_dense[a] = T::zero();
        }
    }

    // Scenario blocks in parallel; each yields its Schur contribution and
    // the data needed for back-substitution.
    struct ScenOut<T: Scalar> {
        e_contrib: DMatrix<T>,
        ru_contrib: DVector<T>,
        schur: DMatrix<T>,
        y: DVector<T>,
        back: ScenBack<T>,
    }
    let scen_results: Vec<Result<ScenOut<T>, SolveError>> = (0..q.n_scen)
        .into_par_iter()
        .map(|s| {
            let w = &p.w[s];
            let mut d = DMatrix::<T>::zeros(wdim, wdim);
            let mut cmat = DMatrix::<T>::zeros(wdim, udim);
            let mut rw = DVector::<T>::zeros(wdim);
            let mut e_contrib = DMatrix::<T>::zeros(udim, udim);
            let mut ru_contrib = DVector::<T>::zeros(udim);
            let mut gu = vec![T::zero(); udim];
            let mut gw = vec![T::zero(); wdim];
            for (k, c) in q.template.iter().enumerate() {
                let g = c.eval(&p.u, w) + q.shift[s][k];
                let slack = -g;
                if slack <= T::zero() {
                    return Err(SolveError::Numerical("iterate left the interior".into()));
                }
                let inv = T::one() / slack;
                let inv2 = inv * inv;
                c.add_grad(&p.u, w, &mut gu, &mut gw);
                for &a in &c.support_w {
                    let va = gw[a];
                    rw[a] -= inv * va;
                    for &b in &c.support_w {
                        d[(a, b)] += inv2 * va * gw[b];
                    }
                    for &b in &c.support_u {
                        cmat[(a, b)] += inv2 * va * gu[b];
                    }
                }
                for &a in &c.support_u {
                    let va = gu[a];
                    ru_contrib[a] -= inv * va;
                    for &b in &c.support_u {
                        e_contrib[(a, b)] += inv2 * va * gu[b];
                    }
                }
                if let Some(qw) = &c.quad_w {
                    let kk = qw.idx.len();
                    for r in 0..kk {
                        for cc in 0..kk {
                            d[(qw.idx[r], qw.idx[cc])] += T::c(2.0) * inv * qw.a[(r, cc)];
                        }
                    }
                }
                if let Some(qu) = &c.quad_u {
                    let kk = qu.idx.len();
                    for r in 0..kk {
                        for cc in 0..kk {
                            e_contrib[(qu.idx[r], qu.idx[cc])] +=
                                T::c(2.0) * inv * qu.a[(r, cc)];
                        }
                    }
                }
                for &a in &c.support_u {
                    gu[a] = T::zero();
                }
                for &a in &c.support_w {
                    gw[a] = T::zero();
                }
            }

            let chol = chol_with_jitter(&d, "scenario")?;
            let dinv_c = chol.solve(&cmat);
            let dinv_r = chol.solve(&rw);
            let schur = cmat.transpose() * &dinv_c;
            let y = cmat.transpose() * &dinv_r;
            Ok(ScenOut { e_contrib, ru_contrib, schur, y, back: ScenBack { dinv_c, dinv_r, rw } })
        })
        .collect();

    let mut e_hat = e_shared;
    let mut ru_hat = ru_total.clone();
    let mut backs = Vec::with_capacity(q.n_scen);
    for r in scen_results {
        let out = r?;
        e_hat += &out.e_contrib;
        e_hat -= &out.schur;
        ru_hat += &out.ru_contrib;
        ru_hat -= &out.y;
        ru_total += &out.ru_contrib;
        backs.push(out.back);
    }

    let du = if udim > 0 {
        chol_with_jitter(&e_hat, "shared")?.solve(&ru_hat)
    } else {
        DVector::zeros(0)
    };

    let mut lambda2 = ru_total.dot(&du);
    let mut dw = Vec::with_capacity(q.n_scen);
    for back in &backs {
        let dws = &back.dinv_r - &back.dinv_c * &du;
        lambda2 += back.rw.dot(&dws);
        dw.push(dws);
    }
    Ok(NewtonStep { du, dw, lambda2 })
}

enum CenterOutcome {
    Centered { lambda2: f64 },
    EarlyExit,
}

/// Newton centering for fixed `t`. `early_exit` may stop the descent as
/// soon as the caller's criterion holds (phase I uses it to leave once a
/// strictly feasible point appears).
fn center<T: Scalar>(
    q: &BlockQcqp<T>,
    p: &mut Point<T>,
    t: T,
    opts: &BarrierOptions<T>,
    newton_iters: &mut usize,
    early_exit: Option<&dyn Fn(&Point<T>) -> bool>,
) -> Result<CenterOutcome, SolveError> {
    let mut prev_lambda2 = T::c(f64::INFINITY);
    let mut plateau = 0usize;
    for _ in 0..opts.max_newton_per_stage {
        if let Some(exit) = early_exit {
            if exit(p) {
                return Ok(CenterOutcome::EarlyExit);
            }
        }
        let step = newton_direction(q, p, t)?;
        *newton_iters += 1;
        let lambda2 = step.lambda2;
        let f0 = barrier_value(q, p, t)
            .ok_or_else(|| SolveError::Numerical("iterate left the interior".into()))?;
        // Below roughly 1e-14·|f| the objective cannot resolve further
        // decrease in f64, so the iterate is as centered as representable.
        let centered_at = opts.center_tol.max(T::c(1e-14) * f0.abs());
        if lambda2 / T::c(2.0) <= centered_at {
            return Ok(CenterOutcome::Centered { lambda2: lambda2.as_f64() });
        }
        // A small decrement that rounding keeps from shrinking further is
        // as centered as this arithmetic can express.
        if (lambda2 - prev_lambda2).abs() <= T::c(0.01) * lambda2 {
            plateau += 1;
            if plateau >= 3 && lambda2 <= T::c(1e-4) {
                return Ok(CenterOutcome::Centered { lambda2: lambda2.as_f64() });
            }
        } else {
            plateau = 0;
        }
        prev_lambda2 = lambda2;
        let mut alpha = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = p.clone();
            for (v, d) in trial.u.iter_mut().zip(step.du.iter()) {
                *v += alpha * *d;
            }
            for (ws, dws) in trial.w.iter_mut().zip(&step.dw) {
                for (v, d) in ws.iter_mut().zip(dws.iter()) {
                    *v += alpha * *d;
                }
            }
            if let Some(f_trial) = barrier_value(q, &trial, t) {
                if f_trial <= f0 - T::c(0.25) * alpha * lambda2 {
                    *p = trial;
                    accepted = true;
                    break;
                }
            }
            alpha /= T::c(2.0);
        }
        if std::env::var_os("CCACOPF_TRACE_BARRIER").is_some() {
            eprintln!(
                "  t={:.1e} lambda2={:.3e} f0={:.8e} accepted={accepted}",
                t.as_f64(),
                lambda2.as_f64(),
                f0.as_f64(),
            );
        }
        if !accepted {
            // A stalled line search with a small decrement is centered for
            // every practical purpose; otherwise it is a genuine failure.
            if lambda2 <= T::c(1e-6) {
                return Ok(CenterOutcome::Centered { lambda2: lambda2.as_f64() });
            }
            return Err(SolveError::Numerical(format!(
                "line search failed (decrement {:.3e})",
                lambda2.as_f64()
            )));
        }
    }
    Err(SolveError::MaxIterations("centering".into()))
}

/// Minimizes the program from a strictly feasible start.
pub fn minimize<T: Scalar>(
    q: &BlockQcqp<T>,
    start: Point<T>,
    opts: &BarrierOptions<T>,
) -> Result<(Point<T>, BarrierStats), SolveError> {
    let mut p = start;
    if q.max_violation(&p) >= T::zero() {
        return Err(SolveError::Build("start point is not strictly feasible".into()));
    }
    let m = T::c(q.n_constraints() as f64);
    let mut t = opts.t0;
    let mut stats = BarrierStats::default();
    for _ in 0..opts.max_stages {
        stats.stages += 1;
        match center(q, &mut p, t, opts, &mut stats.newton_iters, None)? {
            CenterOutcome::Centered { lambda2 } => stats.final_decrement = lambda2,
            CenterOutcome::EarlyExit => unreachable!("no early exit in phase II"),
        }
        let gap = m / t;
        stats.final_gap = gap.as_f64();
        if gap <= opts.tol {
            return Ok((p, stats));
        }
        t *= opts.mu;
    }
    Err(SolveError::MaxIterations("barrier stages".into()))
}

/// Outcome of the phase-I feasibility search.
pub struct FeasiblePoint<T: Scalar> {
    pub point: Point<T>,
    /// max_k g_k at the returned point (negative when strictly feasible).
    pub residual: T,
}

/// Finds a strictly feasible point, or certifies infeasibility via a
/// positive lower bound on the phase-I slack.
pub fn find_feasible<T: Scalar>(
    q: &BlockQcqp<T>,
    guess: Point<T>,
    opts: &BarrierOptions<T>,
) -> Result<(FeasiblePoint<T>, BarrierStats), SolveError> {
    let mut stats = BarrierStats::default();
    let g0 = q.max_violation(&guess);
    if g0 <= -opts.feas_exit {
        return Ok((FeasiblePoint { point: guess, residual: g0 }, stats));
    }

    let mut ph1 = q.phase1();
    let s_idx = q.u_dim;
    // Shared variables that appear only in relaxed one-sided constraints
    // (such as a cost-epigraph variable) would otherwise drift to infinity
    // collecting barrier reward. A wide trust region around the start pins
    // them; it must be generous enough to contain the feasible dispatch
    // set, which holds for the box-bounded programs built here. The
    // infeasibility certificate is therefore relative to this region.
    let radius =
        T::c(10.0) * (T::one() + guess.u.iter().fold(T::zero(), |m, v| m.max(v.abs())));
    for (i, &g) in guess.u.iter().enumerate() {
        ph1.shared.push(super::qcqp::Constraint::new(
            -(g + radius),
            vec![(i, T::one())],
            vec![],
            None,
            None,
        ));
        ph1.shared.push(super::qcqp::Constraint::new(
            g - radius,
            vec![(i, -T::one())],
            vec![],
            None,
            None,
        ));
    }
    let mut p = Point { u: guess.u.clone(), w: guess.w.clone() };
    p.u.push(g0 + T::one().max(g0.abs() / T::c(10.0)));

    let strip = |p: &Point<T>| Point { u: p.u[..q.u_dim].to_vec(), w: p.w.clone() };
    let exit = |p: &Point<T>| q.max_violation(&strip(p)) <= -opts.feas_exit;

    let m = T::c(ph1.n_constraints() as f64);
    let mut t = opts.t0;
    for _ in 0..opts.max_stages {
        stats.stages += 1;
        let outcome = center(&ph1, &mut p, t, opts, &mut stats.newton_iters, Some(&exit))?;
        let base = strip(&p);
        let residual = q.max_violation(&base);
        match outcome {
            CenterOutcome::EarlyExit => {
                return Ok((FeasiblePoint { point: base, residual }, stats));
            }
            CenterOutcome::Centered { lambda2 } => {
                stats.final_decrement = lambda2;
                let gap = m / t;
                stats.final_gap = gap.as_f64();
                let slack_lb = p.u[s_idx] - gap;
                if slack_lb > opts.feas_tol {
                    return Err(SolveError::Infeasible { margin: slack_lb.as_f64() });
                }
                if residual < T::zero() || (gap <= opts.tol.min(opts.feas_tol) ) {
                    return Ok((FeasiblePoint { point: base, residual }, stats));
                }
            }
        }
        t *= opts.mu;
    }
    Err(SolveError::MaxIterations("phase I".into()))
}

/// Phase I + phase II from an arbitrary guess.
pub fn solve<T: Scalar>(
    q: &BlockQcqp<T>,
    guess: Point<T>,
    opts: &BarrierOptions<T>,
) -> Result<(Point<T>, BarrierStats), SolveError> {
    let (feas, stats1) = find_feasible(q, guess, opts)?;
    if feas.residual >= T::zero() {
        return Err(SolveError::Numerical(format!(
            "interior too thin to optimize (residual {:.3e})",
            feas.residual.as_f64()
        )));
    }
    let (p, mut stats2) = minimize(q, feas.point, opts)?;
    stats2.newton_iters += stats1.newton_iters;
    stats2.stages += stats1.stages;
    Ok((p, stats2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::qcqp::{Constraint, QuadBlock};
    use nalgebra::dmatrix;

    fn opts() -> BarrierOptions<f64> {
        BarrierOptions::default()
    }

    /// min z st (p − c)² ≤ z, 0 ≤ p ≤ 1 — analytic optimum clips the cost
    /// minimizer to the box.
    fn box_program(center: f64) -> BlockQcqp<f64> {
        let cost = Constraint::new(
            center * center,
            vec![(0, -2.0 * center), (1, -1.0)],
            vec![],
            Some(QuadBlock { idx: vec![0], a: dmatrix![1.0] }),
            None,
        );
        let lbound = Constraint::new(0.0, vec![(0, -1.0)], vec![], None, None);
        let ubound = Constraint::new(-1.0, vec![(0, 1.0)], vec![], None, None);
        BlockQcqp {
            u_dim: 2,
            w_dim: 0,
            n_scen: 0,
            objective: vec![0.0, 1.0],
            shared: vec![cost, lbound, ubound],
            template: vec![],
            shift: vec![],
        }
    }

    #[test]
    fn box_qp_hits_interior_minimum() {
        let q = box_program(0.7);
        let start = Point { u: vec![0.5, 2.0], w: vec![] };
        let (p, stats) = solve(&q, start, &opts()).unwrap();
        assert!((p.u[0] - 0.7).abs() <= 1e-3, "p = {}", p.u[0]);
        assert!(p.u[1] <= 1e-4, "z = {}", p.u[1]);
        assert!(stats.final_gap <= 1e-6);
    }

    #[test]
    fn box_qp_clips_to_bound() {
        let q = box_program(1.5);
        let start = Point { u: vec![0.5, 4.0], w: vec![] };
        let (p, _) = solve(&q, start, &opts()).unwrap();
        assert!((p.u[0] - 1.0).abs() <= 1e-3, "p = {}", p.u[0]);
        assert!((p.u[1] - 0.25).abs() <= 1e-3, "z = {}", p.u[1]);
    }

    #[test]
    fn contradictory_box_is_certified_infeasible() {
        // p ≤ 0.2 and p ≥ 0.8 simultaneously.
        let a = Constraint::new(-0.2, vec![(0, 1.0)], vec![], None, None);
        let b = Constraint::new(0.8, vec![(0, -1.0)], vec![], None, None);
        let q = BlockQcqp {
            u_dim: 1,
            w_dim: 0,
            n_scen: 0,
            objective: vec![1.0],
            shared: vec![a, b],
            template: vec![],
            shift: vec![],
        };
        let start = Point { u: vec![0.5], w: vec![] };
        match solve(&q, start, &opts()) {
            Err(SolveError::Infeasible { margin }) => assert!(margin > 0.0),
            other => panic!("expected infeasibility, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn scenario_blocks_couple_through_shared_variable() {
        // min p st (x_s − c_s)² ≤ p for shifts c_s; optimum p* → 0 with
        // x_s → c_s.
        let temp = Constraint::new(
            0.0,
            vec![(0, -1.0)],
            vec![],
            None,
            Some(QuadBlock { idx: vec![0], a: dmatrix![1.0] }),
        );
        // (x − c)² = x² − 2cx + c²: fold the scenario-dependent parts into
        // lin_w at build time is impossible with one template, so model
        // x² ≤ p + shift_s with shift shifting the bound instead.
        let q = BlockQcqp {
            u_dim: 1,
            w_dim: 1,
            n_scen: 3,
            objective: vec![1.0],
            shared: vec![],
            template: vec![temp],
            shift: vec![vec![-0.3], vec![-0.1], vec![0.0]],
        };
        // g = x² − p + shift ≤ 0; worst scenario shift = 0 ⇒ p* = 0.
        let start = Point { u: vec![2.0], w: vec![vec![0.5]; 3] };
        let (p, _) = solve(&q, start, &opts()).unwrap();
        assert!(p.u[0] >= 0.0 && p.u[0] <= 1e-4, "p = {}", p.u[0]);
        assert!(q.max_violation(&p) <= 0.0);
    }

    #[test]
    fn feasibility_check_distinguishes_scenarios() {
        // x² ≤ 0.5 + shift: feasible for shift −0.2, infeasible for −0.9.
        let temp = Constraint::new(
            -0.5,
            vec![],
            vec![],
            None,
            Some(QuadBlock { idx: vec![0], a: dmatrix![1.0] }),
        );
        let q = BlockQcqp {
            u_dim: 0,
            w_dim: 1,
            n_scen: 2,
            objective: vec![],
            shared: vec![],
            template: vec![temp],
            shift: vec![vec![-0.2], vec![0.9]],
        };
        let feasible = q.fix_dispatch(&[], 0);
        let infeasible = q.fix_dispatch(&[], 1);
        let guess = Point { u: vec![], w: vec![vec![3.0]] };
        let (fp, _) = find_feasible(&feasible, guess.clone(), &opts()).unwrap();
        assert!(fp.residual < 0.0);
        match find_feasible(&infeasible, guess, &opts()) {
            Err(SolveError::Infeasible { margin }) => assert!(margin > 0.3),
            other => panic!("expected infeasible, got {:?}", other.map(|_| ())),
        }
    }
}
