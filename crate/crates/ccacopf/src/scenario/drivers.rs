//! Solution drivers: one-shot convex solve, the conventional scenario
//! method, the two-stage FAST procedure with detuning, and Monte-Carlo
//! violation estimation of a fixed dispatch.

use super::barrier::{find_feasible, solve as barrier_solve, BarrierOptions, BarrierStats};
use super::program::{build_scenario_program, ProgramCensus, ScenarioProgram};
use super::qcqp::Point;
use super::{generate_scenarios, Scenario, SolveError};
use crate::grid::NetworkCase;
use crate::scalar::Scalar;
use crate::sizing::{case_dims, clopper_pearson, csm_size, fast_sizes, RiskParams, Rounding};
use crate::surrogate::SurrogateModel;
use crate::util::{domains, stream_rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fast,
    Csm,
    Deterministic,
}

/// Generator setpoints with their exact generation cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dispatch<T: Scalar> {
    pub p_gen: Vec<T>,
    pub q_gen: Vec<T>,
    /// $/h at the setpoints (recomputed from the cost polynomial, not the
    /// epigraph variable).
    pub cost: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetuneOutcome {
    /// The stage-one dispatch already satisfied every validation scenario.
    NotNeeded,
    /// Moved toward the robust anchor until all scenarios held.
    LineSearch { alpha: f64 },
    /// Anchor unusable; re-solved over the full scenario set.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub epsilon: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiag {
    pub newton_iters: usize,
    pub stages: usize,
    /// Duality-gap bound at exit, in scaled objective units.
    pub final_gap: f64,
    pub final_decrement: f64,
    /// Largest constraint value at the returned point (audit; ≤ 0 means
    /// feasible).
    pub max_constraint_value: f64,
    /// |epigraph − recomputed cost| in $/h.
    pub epigraph_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    pub probes: usize,
    pub violations: usize,
    pub rate: f64,
    pub ci95: [f64; 2],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolveReport<T: Scalar> {
    pub method: Method,
    pub case: String,
    pub case_fingerprint: String,
    pub model_fingerprint: String,
    pub seed: u64,
    pub range: [f64; 2],
    pub risk: Option<RiskSpec>,
    pub d_used: Option<usize>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n_scenarios: usize,
    pub census: ProgramCensus,
    pub cost_n1: Option<T>,
    pub cost_final: T,
    pub dispatch: Dispatch<T>,
    pub detune: Option<DetuneOutcome>,
    pub solver: SolverDiag,
    pub violation: Option<ViolationEstimate>,
    /// Per-scenario local variables at the solution, retained on request
    /// for offline audits.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub states: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> SolveReport<T> {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}


/// Solves an already-built scenario program to the barrier tolerance.
/// Returns the dispatch, the full primal point, and solver statistics.
pub fn solve_convex<T: Scalar>(
    prog: &ScenarioProgram<T>,
    case: &NetworkCase<T>,
    opts: &BarrierOptions<T>,
) -> Result<(Dispatch<T>, Point<T>, BarrierStats), SolveError> {
    let start = prog.initial_point(case);
    let (point, stats) = barrier_solve(&prog.qcqp, start, opts)?;
    let (p_gen, q_gen) = prog.dispatch_of(&point);
    let cost = case.generation_cost(&p_gen);
    Ok((Dispatch { p_gen, q_gen, cost }, point, stats))
}

fn report_diag<T: Scalar>(
    prog: &ScenarioProgram<T>,
    case: &NetworkCase<T>,
    point: &Point<T>,
    stats: &BarrierStats,
) -> SolverDiag {
    let (pg, _) = prog.dispatch_of(point);
    SolverDiag {
        newton_iters: stats.newton_iters,
        stages: stats.stages,
        final_gap: stats.final_gap,
        final_decrement: stats.final_decrement,
        max_constraint_value: prog.qcqp.max_violation(point).as_f64(),
        epigraph_gap: (prog.cost_of(point) - case.generation_cost(&pg)).abs().as_f64(),
    }
}

/// Checks one scenario's feasibility at a fixed dispatch, returning a
/// witness for warm-starting subsequent checks.
fn scenario_feasible<T: Scalar>(
    prog: &ScenarioProgram<T>,
    u: &[T],
    shift: &[T],
    warm: Option<&Vec<T>>,
    fallback_w: &[T],
    opts: &BarrierOptions<T>,
) -> Result<Option<Vec<T>>, SolveError> {
    let sub = super::qcqp::BlockQcqp {
        u_dim: 0,
        w_dim: prog.qcqp.w_dim,
        n_scen: 1,
        objective: Vec::new(),
        shared: Vec::new(),
        template: prog.qcqp.template.iter().map(|c| c.fix_u(u)).collect(),
        shift: vec![shift.to_vec()],
    };
    let w0 = warm.cloned().unwrap_or_else(|| fallback_w.to_vec());
    let guess = Point { u: Vec::new(), w: vec![w0] };
    match find_feasible(&sub, guess, opts) {
        Ok((fp, _)) => {
            if fp.residual <= opts.feas_tol {
                Ok(Some(fp.point.w.into_iter().next().expect("one scenario")))
            } else {
                Ok(None)
            }
        }
        Err(SolveError::Infeasible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// True when the generator boxes hold at the dispatch `[pg…, qg…]`. The
/// epigraph constraint is skipped: it only defines the free variable z.
fn shared_feasible<T: Scalar>(
    prog: &ScenarioProgram<T>,
    dispatch_u: &[T],
    opts: &BarrierOptions<T>,
) -> bool {
    let mut u = dispatch_u.to_vec();
    u.resize(prog.qcqp.u_dim, T::zero());
    let z_idx = prog.z_index();
    let mut max_g = T::c(f64::NEG_INFINITY);
    for c in &prog.qcqp.shared {
        if c.support_u.contains(&z_idx) {
            continue;
        }
        max_g = max_g.max(c.eval(&u, &[]));
    }
    max_g <= opts.feas_tol
}

/// Empirical violation probability of a fixed dispatch over fresh
/// scenarios (exact per-scenario feasibility subproblems), with the exact
/// 95% Clopper–Pearson interval.
pub fn estimate_violation<T: Scalar>(
    case: &NetworkCase<T>,
    model: &SurrogateModel<T>,
    dispatch: &Dispatch<T>,
    n_probe: usize,
    range: (T, T),
    seed: u64,
    opts: &BarrierOptions<T>,
) -> Result<ViolationEstimate, SolveError> {
    assert!(n_probe >= 100, "violation estimation needs at least 100 probes");
    let nominal = Scenario::nominal(case);
    let prog = build_scenario_program(case, model, std::slice::from_ref(&nominal))?;
    let mut u = dispatch.p_gen.clone();
    u.extend_from_slice(&dispatch.q_gen);

    // Dispatches outside the scenario-independent boxes violate every
    // scenario by definition.
    if !shared_feasible(&prog, &u, opts) {
        let (lo, hi) = clopper_pearson(n_probe, n_probe, T::c(0.95));
        return Ok(ViolationEstimate {
            probes: n_probe,
            violations: n_probe,
            rate: 1.0,
            ci95: [lo.as_f64(), hi.as_f64()],
            seed,
        });
    }
    let mut u_full = u.clone();
    u_full.push(T::zero()); // z unused by per-scenario constraints

    let fallback = prog.initial_point(case).w.into_iter().next().expect("one scenario");
    let (lo_f, hi_f) = range;

    // Chunked evaluation: parallel across chunks, warm-started chains
    // inside each chunk, so results are independent of worker count.
    const CHUNK: usize = 64;
    let chunks: Vec<(usize, usize)> = (0..n_probe)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(n_probe)))
        .collect();
    let per_chunk: Vec<Result<usize, SolveError>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut violations = 0usize;
            let mut warm: Option<Vec<T>> = None;
            for i in start..end {
                let mut rng = stream_rng(seed, domains::PROBES, i as u64);
                let scen = Scenario::sample(case, lo_f, hi_f, &mut rng);
                let shift = prog.shift_for(&scen);
                match scenario_feasible(&prog, &u_full, &shift, warm.as_ref(), &fallback, opts)? {
                    Some(w) => warm = Some(w),
                    None => violations += 1,
                }
            }
            Ok(violations)
        })
        .collect();

    let mut violations = 0usize;
    for c in per_chunk {
        violations += c?;
    }
    let rate = violations as f64 / n_probe as f64;
    let (lo, hi) = clopper_pearson(violations, n_probe, T::c(0.95));
    Ok(ViolationEstimate {
        probes: n_probe,
        violations,
        rate,
        ci95: [lo.as_f64(), hi.as_f64()],
        seed,
    })
}

fn base_report<T: Scalar>(
    method: Method,
    case: &NetworkCase<T>,
    model: &SurrogateModel<T>,
    seed: u64,
    range: (T, T),
    prog: &ScenarioProgram<T>,
    dispatch: Dispatch<T>,
    solver: SolverDiag,
) -> SolveReport<T> {
    SolveReport {
        method,
        case: case.name.clone(),
        case_fingerprint: case.fingerprint(),
        model_fingerprint: model.fingerprint(),
        seed,
        range: [range.0.as_f64(), range.1.as_f64()],
        risk: None,
        d_used: None,
        n1: None,
        n2: None,
        n_scenarios: prog.qcqp.n_scen,
        census: prog.census,
        cost_n1: None,
        cost_final: dispatch.cost,
        dispatch,
        detune: None,
        solver,
        violation: None,
        states: None,
    }
}

/// One-shot solve over the nominal scenario.
pub fn solve_deterministic<T: Scalar>(
    case: &NetworkCase<T>,
    model: &SurrogateModel<T>,
    seed: u64,
    opts: &BarrierOptions<T>,
) -> Result<SolveReport<T>, SolveError> {
    let nominal = Scenario::nominal(case);
    let prog = build_scenario_program(case, model, std::slice::from_ref(&nominal))?;
    let (dispatch, point, stats) = solve_convex(&prog, case, opts)?;
    let solver = report_diag(&prog, case, &point, &stats);
    let mut report =
        base_report(Method::Deterministic, case, model, seed, (T::one(), T::one()), &prog, dispatch, solver);
    report.states = Some(point.w);
    Ok(report)
}

/// Conventional scenario method: one solve over the full bound-sized set.
pub fn solve_csm<T: Scalar>(
    case: &NetworkCase<T>,
    model: &SurrogateModel<T>,
    risk: &RiskParams<T>,
    range: (T, T),
    seed: u64,
    rounding: Rounding,
    keep_states: bool,
    opts: &BarrierOptions<T>,
) -> Result<SolveReport<T>, SolveError> {
    let (_, d_csm) = case_dims(case);
    let n_prime = csm_size(risk, d_csm, rounding);
    let set = generate_scenarios(case, n_prime, range, seed);
    let prog = build_scenario_program(case, model, &set.scenarios)?;
    let (dispatch, point, stats) = solve_convex(&prog, case, opts)?;
    let solver = report_diag(&prog, case, &point, &stats);
    let mut report = base_report(Method::Csm, case, model, seed, range, &prog, dispatch, solver);
    report.risk = Some(RiskSpec { epsilon: risk.epsilon.as_f64(), beta: risk.beta.as_f64() });
    report.d_used = Some(d_csm);
    if keep_states {
        report.states = Some(point.w);
    }
    Ok(report)
}

/// Two-stage FAST solve: optimize over `n1 = d + 1` scenarios, then detune
/// the dispatch against `n2` fresh scenarios by moving toward a robust
/// anchor until every scenario admits a feasible local state.
pub fn solve_fast<T: Scalar>(
    case: &NetworkCase<T>,
    model: &SurrogateModel<T>,
    risk: &RiskParams<T>,
    range: (T, T),
    seed: u64,
    keep_states: bool,
    opts: &BarrierOptions<T>,
) -> Result<SolveReport<T>, SolveError> {
    let (d_fast, _) = case_dims(case);
    let sizes = fast_sizes(risk, d_fast, Rounding::Ceil);
    let (n1, n2) = (sizes.n1, sizes.n2);
    let set = generate_scenarios(case, n1 + n2, range, seed);

    let prog1 = build_scenario_program(case, model, &set.scenarios[..n1])?;
    let (dispatch1, point1, stats1) = solve_convex(&prog1, case, opts)?;
    let mut solver = report_diag(&prog1, case, &point1, &stats1);
    let cost_n1 = dispatch1.cost;

    // Full-set program gives the per-scenario templates/shifts for the
    // detuning feasibility checks.
    let prog_full = build_scenario_program(case, model, &set.scenarios)?;
    let fallback_w = prog_full.initial_point(case).w.into_iter().next().expect("scenario");
    let mut u1 = dispatch1.p_gen.clone();
    u1.extend_from_slice(&dispatch1.q_gen);
    u1.push(T::zero()); // z: unused by per-scenario constraints

    // Which validation scenarios does the stage-one dispatch violate?
    let mut warm: Vec<Option<Vec<T>>> = vec![None; n1 + n2];
    let check_all = |u: &[T], warm: &mut Vec<Option<Vec<T>>>, scenarios: std::ops::Range<usize>|
        -> Result<bool, SolveError> {
        let results: Vec<Result<(usize, Option<Vec<T>>), SolveError>> = scenarios
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&s| {
                let res = scenario_feasible(
                    &prog_full,
                    u,
                    &prog_full.qcqp.shift[s],
                    warm[s].as_ref(),
                    &fallback_w,
                    opts,
                )?;
                Ok((s, res))
            })
            .collect();
        let mut all = true;
        for r in results {
            let (s, res) = r?;
            match res {
                Some(w) => warm[s] = Some(w),
                None => all = false,
            }
        }
        Ok(all)
    };

    let stage1_ok = check_all(&u1, &mut warm, n1..n1 + n2)?;
    let (dispatch_final, detune, states) = if stage1_ok {
        let states = keep_states.then(|| {
            let mut w = point1.w.clone();
            w.extend((n1..n1 + n2).map(|s| warm[s].clone().expect("feasible witness")));
            w
        });
        (dispatch1.clone(), DetuneOutcome::NotNeeded, states)
    } else {
        // Robust anchor: the box-corner scenario at the top of the range.
        let corner = Scenario::box_corner(case, range.1);
        let anchor_attempt = build_scenario_program(case, model, std::slice::from_ref(&corner))
            .and_then(|prog_a| solve_convex(&prog_a, case, opts).map(|(d, _, _)| d));
        let mut anchor_u = None;
        if let Ok(anchor) = anchor_attempt {
            let mut ua = anchor.p_gen.clone();
            ua.extend_from_slice(&anchor.q_gen);
            ua.push(T::zero());
            // The anchor must clear every scenario (including the first
            // n1) for the line-search endpoints to be valid.
            if check_all(&ua, &mut warm, 0..n1 + n2)? {
                anchor_u = Some(ua);
            }
        }

        match anchor_u {
            None => {
                // Re-solve over the whole set.
                let (dispatch_full, point_full, stats_full) =
                    solve_convex(&prog_full, case, opts)?;
                solver = report_diag(&prog_full, case, &point_full, &stats_full);
                let states = keep_states.then(|| point_full.w.clone());
                (dispatch_full, DetuneOutcome::Fallback, states)
            }
            Some(ua) => {
                // Both endpoints satisfy the first n1 scenarios (the
                // stage-one point by construction, the anchor by the check
                // above), so convexity of each scenario's feasible-dispatch
                // set means only the n2 validation scenarios need testing
                // along the segment.
                let blend = |alpha: T| -> Vec<T> {
                    u1.iter().zip(&ua).map(|(a, b)| (T::one() - alpha) * *a + alpha * *b).collect()
                };
                let mut lo = T::zero(); // infeasible
                let mut hi = T::one(); // feasible
                for _ in 0..30 {
                    if (hi - lo).as_f64() <= 1e-4 {
                        break;
                    }
                    let mid = (lo + hi) / T::c(2.0);
                    if check_all(&blend(mid), &mut warm, n1..n1 + n2)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let u_final = blend(hi);
                // Refresh witnesses at the accepted point.
                if !check_all(&u_final, &mut warm, n1..n1 + n2)? {
                    return Err(SolveError::Numerical(
                        "detuned point lost feasibility at the accepted step".into(),
                    ));
                }
                let p_gen = u_final[..prog_full.n_gens].to_vec();
                let q_gen = u_final[prog_full.n_gens..2 * prog_full.n_gens].to_vec();
                let cost = case.generation_cost(&p_gen);
                let states = keep_states.then(|| {
                    (0..n1 + n2)
                        .map(|s| warm[s].clone().unwrap_or_else(|| fallback_w.clone()))
                        .collect()
                });
                (
                    Dispatch { p_gen, q_gen, cost },
                    DetuneOutcome::LineSearch { alpha: hi.as_f64() },
                    states,
                )
            }
        }
    };

    let mut report = base_report(
        Method::Fast,
        case,
        model,
        seed,
        range,
        &prog_full,
        dispatch_final,
        solver,
    );
    report.risk = Some(RiskSpec { epsilon: risk.epsilon.as_f64(), beta: risk.beta.as_f64() });
    report.d_used = Some(d_fast);
    report.n1 = Some(n1);
    report.n2 = Some(n2);
    report.cost_n1 = Some(cost_n1);
    report.detune = Some(detune);
    report.states = states;
    Ok(report)
}
