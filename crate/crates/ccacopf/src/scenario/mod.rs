//! Scenario program construction and solution: uncertainty sampling, the
//! convex program over learned power-flow maps, a block-structured barrier
//! solver, and the FAST / conventional scenario-method drivers.

mod barrier;
mod drivers;
mod program;
mod qcqp;

pub use barrier::{BarrierOptions, BarrierStats, SolveError};
pub use drivers::{
    estimate_violation, solve_convex, solve_csm, solve_deterministic, solve_fast, DetuneOutcome,
    Dispatch, Method, RiskSpec, SolveReport, SolverDiag, ViolationEstimate,
};
pub use program::{build_scenario_program, ProgramCensus, ScenarioProgram};
pub use qcqp::{BlockQcqp, Point};

use crate::grid::NetworkCase;
use crate::scalar::Scalar;
use crate::util::{domains, stream_rng};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

/// One realization of the random net loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Scenario<T: Scalar> {
    pub p_net: Vec<T>,
    pub q_net: Vec<T>,
}

impl<T: Scalar> Scenario<T> {
    /// Nominal loads, no perturbation.
    pub fn nominal(case: &NetworkCase<T>) -> Self {
        Scenario {
            p_net: case.buses.iter().map(|b| b.p_net_nom).collect(),
            q_net: case.buses.iter().map(|b| b.q_net_nom).collect(),
        }
    }

    /// Scales each bus's nominal (p, q) by one uniform factor in [lo, hi].
    pub fn sample<R: rand::Rng>(case: &NetworkCase<T>, lo: T, hi: T, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(lo, hi);
        let mut p = Vec::with_capacity(case.n_buses());
        let mut q = Vec::with_capacity(case.n_buses());
        for b in &case.buses {
            let factor = dist.sample(rng);
            p.push(b.p_net_nom * factor);
            q.push(b.q_net_nom * factor);
        }
        Scenario { p_net: p, q_net: q }
    }

    /// All load factors pinned at `factor` (the robust anchor uses the
    /// upper bound of the range).
    pub fn box_corner(case: &NetworkCase<T>, factor: T) -> Self {
        Scenario {
            p_net: case.buses.iter().map(|b| b.p_net_nom * factor).collect(),
            q_net: case.buses.iter().map(|b| b.q_net_nom * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScenarioSet<T: Scalar> {
    pub scenarios: Vec<Scenario<T>>,
    pub seed: u64,
    pub range: [f64; 2],
    pub case_fingerprint: String,
}

/// Draws `count` i.i.d. scenarios; deterministic in `(seed, index)` and
/// independent of evaluation order.
pub fn generate_scenarios<T: Scalar>(
    case: &NetworkCase<T>,
    count: usize,
    range: (T, T),
    seed: u64,
) -> ScenarioSet<T> {
    assert!(count >= 1, "count must be at least 1");
    let (lo, hi) = range;
    assert!(lo <= hi, "range must be ordered");
    let scenarios = (0..count as u64)
        .map(|i| {
            let mut rng = stream_rng(seed, domains::SCENARIOS, i);
            Scenario::sample(case, lo, hi, &mut rng)
        })
        .collect();
    ScenarioSet {
        scenarios,
        seed,
        range: [lo.as_f64(), hi.as_f64()],
        case_fingerprint: case.fingerprint(),
    }
}

impl<T: Scalar> ScenarioSet<T> {
    /// Wide CSV, one scenario per row: p net loads then q net loads.
    pub fn to_csv_string(&self, case: &NetworkCase<T>) -> String {
        let mut cols = Vec::new();
        for b in &case.buses {
            cols.push(format!("p_net{}", b.ext_id));
        }
        for b in &case.buses {
            cols.push(format!("q_net{}", b.ext_id));
        }
        let mut out = cols.join(",");
        out.push('\n');
        for s in &self.scenarios {
            let row: Vec<String> = s
                .p_net
                .iter()
                .chain(s.q_net.iter())
                .map(|v| v.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_case;

    fn nine_bus() -> NetworkCase<f64> {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../cases/case9.m");
        parse_case(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn degenerate_range_reproduces_nominal() {
        let case = nine_bus();
        let set = generate_scenarios(&case, 3, (1.0, 1.0), 7);
        let nominal = Scenario::nominal(&case);
        for s in &set.scenarios {
            assert_eq!(s, &nominal);
        }
    }

    #[test]
    fn same_seed_gives_identical_serialization() {
        let case = nine_bus();
        let a = generate_scenarios(&case, 20, (0.7, 1.3), 99);
        let b = generate_scenarios(&case, 20, (0.7, 1.3), 99);
        assert_eq!(a.to_csv_string(&case), b.to_csv_string(&case));
    }

    #[test]
    fn mean_scale_factor_approaches_one() {
        let case = nine_bus();
        let set = generate_scenarios(&case, 100_000, (0.7, 1.3), 3);
        // Bus 4 (index) carries 0.9 pu nominal load.
        let nominal = 0.9;
        let mean: f64 =
            set.scenarios.iter().map(|s| s.p_net[4] / nominal).sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "mean factor {mean}");
    }
}
