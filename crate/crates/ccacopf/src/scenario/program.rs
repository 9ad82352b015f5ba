//! Assembly of the convex dispatch program over learned power-flow maps.
//!
//! Decision variables
//!
//! * shared `u = [pg_0…pg_{G−1}, qg_0…qg_{G−1}, z]` — generator setpoints
//!   and the scaled cost epigraph variable;
//! * per scenario `w_s = [x_s (2n), flow vars (4 per limited branch:
//!   p_fwd, p_rev, q_fwd, q_rev)]`.
//!
//! Constraints per scenario: learned injection maps bounded by net
//! generation, learned flow maps bounded by flow variables, voltage
//! magnitude caps, apparent-power caps on flow variables, and the trusted
//! voltage domain (real-part floor, imaginary-part band) that keeps states
//! where the maps were trained; shared: generator boxes and the quadratic
//! cost epigraph. Everything is convex because the learned quadratic
//! matrices are PSD.
//!
//! Variable/constraint census (G generators, n buses, L limited branches,
//! N scenarios):
//!
//! ```text
//! vars = 2G + 1 + N·(2n + 4L)
//! cons = 4G + 1 + N·(7n + 6L)
//! ```

use super::qcqp::{BlockQcqp, Constraint, Point, QuadBlock};
use super::{Scenario, SolveError};
use crate::grid::NetworkCase;
use crate::scalar::Scalar;
use crate::surrogate::{QuadraticMap, SurrogateModel};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCensus {
    pub shared_vars: usize,
    pub scen_vars_each: usize,
    pub total_vars: usize,
    pub shared_cons: usize,
    pub scen_cons_each: usize,
    pub total_cons: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioProgram<T: Scalar> {
    pub qcqp: BlockQcqp<T>,
    /// Divisor applied to the cost constraint so the epigraph variable is
    /// O(1); reported costs multiply back.
    pub cost_scale: T,
    pub n_gens: usize,
    pub n_buses: usize,
    /// Branch indices carrying apparent-power limits, in case order.
    pub limited: Vec<usize>,
    pub census: ProgramCensus,
    /// Which net-load component (is_q, bus) shifts each template row.
    shift_kind: Vec<Option<(bool, usize)>>,
    /// Envelope midpoint, the canonical strictly-interior state guess.
    state_mid: Vec<T>,
}

fn quad_from_map<T: Scalar>(map: &QuadraticMap<T>) -> (QuadBlock<T>, Vec<(usize, T)>, T) {
    let quad = QuadBlock { idx: map.features.clone(), a: map.a_matrix() };
    let lin: Vec<(usize, T)> =
        map.features.iter().copied().zip(map.b.iter().copied()).collect();
    (quad, lin, map.c)
}

/// Builds the scenario program for `case` with `model`'s maps and the
/// given load scenarios.
pub fn build_scenario_program<T: Scalar>(
    case: &NetworkCase<T>,
    model: &SurrogateModel<T>,
    scenarios: &[Scenario<T>],
) -> Result<ScenarioProgram<T>, SolveError> {
    let n = case.n_buses();
    let n_gens = case.generators.len();
    if scenarios.is_empty() {
        return Err(SolveError::Build("at least one scenario required".into()));
    }
    if model.bus_p.len() != n
        || model.bus_q.len() != n
        || model.branch_p.len() != case.branches.len()
        || model.branch_q.len() != case.branches.len()
    {
        return Err(SolveError::Build("model does not cover every constrained quantity".into()));
    }
    if model.case_fingerprint != case.fingerprint() {
        return Err(SolveError::Build("model was trained on a different case".into()));
    }

    let limited = case.limited_branches();
    let n_limited = limited.len();
    let u_dim = 2 * n_gens + 1;
    let w_dim = 2 * n + 4 * n_limited;
    let z_idx = 2 * n_gens;
    let flow_var = |lix: usize, quantity_q: bool, reverse: bool| -> usize {
        2 * n + 4 * lix + 2 * (quantity_q as usize) + (reverse as usize)
    };

    // Cost scale: full-output generation cost, floored at 1.
    let pmax: Vec<T> = case.generators.iter().map(|g| g.pmax).collect();
    let cost_scale = case.generation_cost(&pmax).max(T::one());

    // Shared constraints: boxes then the cost epigraph.
    let mut shared = Vec::with_capacity(4 * n_gens + 1);
    for (gix, g) in case.generators.iter().enumerate() {
        if !(g.pmin < g.pmax) || !(g.qmin < g.qmax) {
            return Err(SolveError::Build(format!(
                "generator {gix} has a degenerate output box"
            )));
        }
        shared.push(Constraint::new(-g.pmax, vec![(gix, T::one())], vec![], None, None));
        shared.push(Constraint::new(g.pmin, vec![(gix, -T::one())], vec![], None, None));
        shared.push(Constraint::new(-g.qmax, vec![(n_gens + gix, T::one())], vec![], None, None));
        shared.push(Constraint::new(g.qmin, vec![(n_gens + gix, -T::one())], vec![], None, None));
    }
    {
        let mut r = T::zero();
        let mut lin = Vec::with_capacity(n_gens + 1);
        let mut quad_idx = Vec::new();
        let mut quad_diag = Vec::new();
        for (gix, g) in case.generators.iter().enumerate() {
            r += g.c0 / cost_scale;
            if g.c1 != T::zero() {
                lin.push((gix, g.c1 / cost_scale));
            }
            if g.c2 != T::zero() {
                quad_idx.push(gix);
                quad_diag.push(g.c2 / cost_scale);
            }
        }
        lin.push((z_idx, -T::one()));
        let quad_u = if quad_idx.is_empty() {
            None
        } else {
            let k = quad_idx.len();
            let mut a = DMatrix::<T>::zeros(k, k);
            for (i, &v) in quad_diag.iter().enumerate() {
                a[(i, i)] = v;
            }
            Some(QuadBlock { idx: quad_idx, a })
        };
        shared.push(Constraint::new(r, lin, vec![], quad_u, None));
    }

    // Per-scenario template; the sampled net loads enter as shifts.
    let mut template = Vec::with_capacity(3 * n + 6 * n_limited);
    let mut shift_kind: Vec<Option<(bool, usize)>> = Vec::new(); // (is_q, bus)
    for i in 0..n {
        let (quad, lin_w, c) = quad_from_map(&model.bus_p[i].map);
        let lin_u: Vec<(usize, T)> =
            case.gens_at(i).into_iter().map(|g| (g, -T::one())).collect();
        template.push(Constraint::new(c, lin_u, lin_w, None, Some(quad)));
        shift_kind.push(Some((false, i)));
    }
    for i in 0..n {
        let (quad, lin_w, c) = quad_from_map(&model.bus_q[i].map);
        let lin_u: Vec<(usize, T)> =
            case.gens_at(i).into_iter().map(|g| (n_gens + g, -T::one())).collect();
        template.push(Constraint::new(c, lin_u, lin_w, None, Some(quad)));
        shift_kind.push(Some((true, i)));
    }
    for (lix, &br) in limited.iter().enumerate() {
        for reverse in [false, true] {
            let (quad, mut lin_w, c) = quad_from_map(&model.branch_p[br][reverse as usize].map);
            lin_w.push((flow_var(lix, false, reverse), -T::one()));
            template.push(Constraint::new(c, vec![], lin_w, None, Some(quad)));
            shift_kind.push(None);
        }
        for reverse in [false, true] {
            let (quad, mut lin_w, c) = quad_from_map(&model.branch_q[br][reverse as usize].map);
            lin_w.push((flow_var(lix, true, reverse), -T::one()));
            template.push(Constraint::new(c, vec![], lin_w, None, Some(quad)));
            shift_kind.push(None);
        }
    }
    for bus in &case.buses {
        let idx = vec![2 * bus.id, 2 * bus.id + 1];
        let a = DMatrix::<T>::identity(2, 2);
        template.push(Constraint::new(
            -bus.vmax * bus.vmax,
            vec![],
            vec![],
            None,
            Some(QuadBlock { idx, a }),
        ));
        shift_kind.push(None);
    }
    // Trusted state envelope: the maps are only valid where they saw
    // data, so every state coordinate stays inside the model's box.
    for k in 0..2 * n {
        template.push(Constraint::new(-model.state_hi[k], vec![], vec![(k, T::one())], None, None));
        shift_kind.push(None);
        template.push(Constraint::new(model.state_lo[k], vec![], vec![(k, -T::one())], None, None));
        shift_kind.push(None);
    }
    for (lix, &br) in limited.iter().enumerate() {
        let smax = case.branches[br].s_max.expect("limited branch has a cap");
        for reverse in [false, true] {
            let idx = vec![flow_var(lix, false, reverse), flow_var(lix, true, reverse)];
            let a = DMatrix::<T>::identity(2, 2);
            template.push(Constraint::new(
                -smax * smax,
                vec![],
                vec![],
                None,
                Some(QuadBlock { idx, a }),
            ));
            shift_kind.push(None);
        }
    }

    let shift: Vec<Vec<T>> = scenarios
        .iter()
        .map(|scen| {
            shift_kind
                .iter()
                .map(|k| match k {
                    Some((false, bus)) => scen.p_net[*bus],
                    Some((true, bus)) => scen.q_net[*bus],
                    None => T::zero(),
                })
                .collect()
        })
        .collect();

    let mut objective = vec![T::zero(); u_dim];
    objective[z_idx] = T::one();

    let census = ProgramCensus {
        shared_vars: u_dim,
        scen_vars_each: w_dim,
        total_vars: u_dim + scenarios.len() * w_dim,
        shared_cons: shared.len(),
        scen_cons_each: template.len(),
        total_cons: shared.len() + scenarios.len() * template.len(),
    };

    Ok(ScenarioProgram {
        qcqp: BlockQcqp {
            u_dim,
            w_dim,
            n_scen: scenarios.len(),
            objective,
            shared,
            template,
            shift,
        },
        cost_scale,
        n_gens,
        n_buses: n,
        limited,
        census,
        shift_kind,
        state_mid: model
            .state_lo
            .iter()
            .zip(&model.state_hi)
            .map(|(&l, &h)| (l + h) / T::c(2.0))
            .collect(),
    })
}

impl<T: Scalar> ScenarioProgram<T> {
    pub fn z_index(&self) -> usize {
        2 * self.n_gens
    }

    /// Template shift vector for an arbitrary scenario (feasibility
    /// subproblems probe scenarios that were not part of the build).
    pub fn shift_for(&self, scen: &Scenario<T>) -> Vec<T> {
        self.shift_kind
            .iter()
            .map(|k| match k {
                Some((false, bus)) => scen.p_net[*bus],
                Some((true, bus)) => scen.q_net[*bus],
                None => T::zero(),
            })
            .collect()
    }

    /// Mid-box dispatch, flat voltages inside the caps, zero flows —
    /// an arbitrary but deterministic phase-I start.
    pub fn initial_point(&self, case: &NetworkCase<T>) -> Point<T> {
        let mut u = vec![T::zero(); self.qcqp.u_dim];
        for (gix, g) in case.generators.iter().enumerate() {
            u[gix] = (g.pmin + g.pmax) / T::c(2.0);
            u[self.n_gens + gix] = (g.qmin + g.qmax) / T::c(2.0);
        }
        let mid: Vec<T> = u[..self.n_gens].to_vec();
        u[self.z_index()] = case.generation_cost(&mid) / self.cost_scale + T::one();

        let mut w0 = vec![T::zero(); self.qcqp.w_dim];
        w0[..2 * self.n_buses].copy_from_slice(&self.state_mid);
        Point { u, w: vec![w0; self.qcqp.n_scen] }
    }

    /// Generator setpoints from a solved point.
    pub fn dispatch_of(&self, p: &Point<T>) -> (Vec<T>, Vec<T>) {
        (p.u[..self.n_gens].to_vec(), p.u[self.n_gens..2 * self.n_gens].to_vec())
    }

    /// Epigraph value in cost units ($/h).
    pub fn cost_of(&self, p: &Point<T>) -> T {
        p.u[self.z_index()] * self.cost_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acpf::generate_training_set;
    use crate::grid::{build_admittance, parse_case};
    use crate::scenario::generate_scenarios;
    use crate::surrogate::{train_all, TrainingConfig};

    fn five_bus_setup() -> (NetworkCase<f64>, SurrogateModel<f64>) {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/case5.m");
        let case = parse_case(&std::fs::read_to_string(path).unwrap()).unwrap();
        let y = build_admittance(&case).unwrap();
        let data = generate_training_set(&case, &y, 200, (0.7, 1.3), 1).unwrap();
        let (model, _) = train_all(&case, &y, &data, &TrainingConfig::default()).unwrap();
        (case, model)
    }

    #[test]
    fn census_matches_closed_form() {
        let (case, model) = five_bus_setup();
        let scen = generate_scenarios(&case, 1, (1.0, 1.0), 0);
        let prog = build_scenario_program(&case, &model, &scen.scenarios).unwrap();
        // 5 gens, 5 buses, 2 limited branches (1-2 and 4-5 carry ratings).
        assert_eq!(prog.limited.len(), 2);
        assert_eq!(prog.census.shared_vars, 11);
        assert_eq!(prog.census.scen_vars_each, 10 + 4 * 2);
        assert_eq!(prog.census.total_vars, 11 + 18);
        assert_eq!(prog.census.shared_cons, 21);
        assert_eq!(prog.census.scen_cons_each, 7 * 5 + 6 * 2);
        assert_eq!(prog.census.total_cons, 21 + 47);
        assert_eq!(prog.qcqp.n_constraints(), prog.census.total_cons);
        assert_eq!(prog.qcqp.n_vars(), prog.census.total_vars);
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let (case, model) = five_bus_setup();
        let mut other = case.clone();
        other.buses[1].p_net_nom *= 1.5;
        let scen = generate_scenarios(&other, 1, (1.0, 1.0), 0);
        match build_scenario_program(&other, &model, &scen.scenarios) {
            Err(SolveError::Build(msg)) => assert!(msg.contains("different case")),
            other => panic!("expected build error, got {:?}", other.map(|_| ())),
        }
    }
}
