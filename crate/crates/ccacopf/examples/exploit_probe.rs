//! Scratch: inspect the solved per-scenario state of a deterministic solve.

use ccacopf::acpf::{eval_injections, generate_training_set};
use ccacopf::grid::{build_admittance, parse_case};
use ccacopf::scenario::{solve_deterministic, BarrierOptions};
use ccacopf::surrogate::{train_all, TrainingConfig};

fn main() {
    let path = format!("{}/../../cases/case5.m", env!("CARGO_MANIFEST_DIR"));
    let case = parse_case::<f64>(&std::fs::read_to_string(path).unwrap()).unwrap();
    let y = build_admittance(&case).unwrap();
    let data = generate_training_set(&case, &y, 2000, (0.7, 1.3), 42).unwrap();
    let (model, _) = train_all(&case, &y, &data, &TrainingConfig::default()).unwrap();

    println!("bus P map intercepts c_i:");
    for tm in &model.bus_p {
        println!("  {}: c = {:.4}, |b| = {:.4}", tm.target,
            tm.map.c,
            tm.map.b.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let sum_c: f64 = model.bus_p.iter().map(|tm| tm.map.c).sum();
    println!("sum of P intercepts: {sum_c:.4}");

    let det = solve_deterministic(&case, &model, 0, &BarrierOptions::default()).unwrap();
    println!("cost {:.1}, pg = {:?}", det.cost_final, det.dispatch.p_gen);
    let states = det.states.unwrap();
    let x = &states[0][..10];
    println!("solved X: {x:?}");
    let mags: Vec<f64> =
        (0..5).map(|i| (x[2 * i] * x[2 * i] + x[2 * i + 1] * x[2 * i + 1]).sqrt()).collect();
    println!("voltage magnitudes: {mags:?}");
    let vs = ccacopf::acpf::VoltageState { x: x.to_vec() };
    let (p_true, _) = eval_injections(&vs, &y);
    println!("true injections at solved X: {p_true:?}");
    let p_sur: Vec<f64> = model.bus_p.iter().map(|tm| tm.map.eval(x)).collect();
    println!("surrogate injections:        {p_sur:?}");
    println!("loads: {:?}", case.buses.iter().map(|b| b.p_net_nom).collect::<Vec<_>>());
}
