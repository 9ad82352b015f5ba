//! Scratch probe: time pipeline stages on the bundled cases.

use ccacopf::acpf::generate_training_set;
use ccacopf::grid::{build_admittance, parse_case};
use ccacopf::scenario::{
    build_scenario_program, estimate_violation, generate_scenarios, solve_convex, solve_csm,
    solve_deterministic, solve_fast, BarrierOptions,
};
use ccacopf::sizing::{RiskParams, Rounding};
use ccacopf::surrogate::{train_all, TrainingConfig};
use std::time::Instant;

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "case5.m".into());
    let path = format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"));
    let case = parse_case::<f64>(&std::fs::read_to_string(path).unwrap()).unwrap();
    let y = build_admittance(&case).unwrap();

    let t0 = Instant::now();
    let data = generate_training_set(&case, &y, 2000, (0.7, 1.3), 42).unwrap();
    println!("training data: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let (model, _) = train_all(&case, &y, &data, &TrainingConfig::default()).unwrap();
    println!("training: {:?}", t0.elapsed());

    let opts = BarrierOptions::default();
    let risk = RiskParams::new(0.05, 1e-4).unwrap();

    let t0 = Instant::now();
    let det = solve_deterministic(&case, &model, 0, &opts).unwrap();
    println!(
        "deterministic: {:?} cost {:.1} $/h (newton {}, maxg {:.2e}, epi {:.2e})",
        t0.elapsed(),
        det.cost_final,
        det.solver.newton_iters,
        det.solver.max_constraint_value,
        det.solver.epigraph_gap,
    );

    let t0 = Instant::now();
    let scen = generate_scenarios(&case, 50, (0.7, 1.3), 7);
    let prog = build_scenario_program(&case, &model, &scen.scenarios).unwrap();
    let (d50, _, stats) = solve_convex(&prog, &case, &opts).unwrap();
    println!(
        "50-scenario: {:?} cost {:.1} (newton {}, stages {})",
        t0.elapsed(),
        d50.cost,
        stats.newton_iters,
        stats.stages
    );

    let t0 = Instant::now();
    let fast = solve_fast(&case, &model, &risk, (0.7, 1.3), 11, false, &opts).unwrap();
    println!(
        "FAST: {:?} n1 {} n2 {} cost_n1 {:.1} cost {:.1} detune {:?}",
        t0.elapsed(),
        fast.n1.unwrap(),
        fast.n2.unwrap(),
        fast.cost_n1.unwrap(),
        fast.cost_final,
        fast.detune.unwrap()
    );

    let t0 = Instant::now();
    let csm = solve_csm(&case, &model, &risk, (0.7, 1.3), 11, Rounding::Truncate, false, &opts)
        .unwrap();
    println!(
        "CSM: {:?} n {} cost {:.1} (newton {})",
        t0.elapsed(),
        csm.n_scenarios,
        csm.cost_final,
        csm.solver.newton_iters
    );

    let t0 = Instant::now();
    let viol =
        estimate_violation(&case, &model, &fast.dispatch, 1000, (0.7, 1.3), 3, &opts).unwrap();
    println!(
        "violation (1000 probes): {:?} rate {:.4} ci [{:.4}, {:.4}]",
        t0.elapsed(),
        viol.rate,
        viol.ci95[0],
        viol.ci95[1]
    );
}
