//! End-to-end surrogate training on the bundled cases: cardinality,
//! convexity, holdout accuracy, and model serialization contracts.

use ccacopf::acpf::generate_training_set;
use ccacopf::grid::{build_admittance, parse_case, NetworkCase};
use ccacopf::surrogate::{train_all, SurrogateModel, TrainError, TrainingConfig};

fn load(name: &str) -> NetworkCase<f64> {
    let path = format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_case(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train(name: &str, samples: usize, config: &TrainingConfig) -> (NetworkCase<f64>, SurrogateModel<f64>) {
    let case = load(name);
    let y = build_admittance(&case).unwrap();
    let data = generate_training_set(&case, &y, samples, (0.7, 1.3), 42).unwrap();
    let (model, _) = train_all(&case, &y, &data, config).unwrap();
    (case, model)
}

#[test]
fn nine_bus_model_has_one_map_per_quantity() {
    let (case, model) = train("case9.m", 400, &TrainingConfig::default());
    assert_eq!(model.bus_p.len(), 9);
    assert_eq!(model.bus_q.len(), 9);
    assert_eq!(model.branch_p.len(), case.branches.len());
    assert_eq!(model.branch_q.len(), 9);
    model.validate().unwrap();
}

#[test]
fn all_stored_maps_are_numerically_psd() {
    let (_, model) = train("case9.m", 400, &TrainingConfig::default());
    for tm in model.all_maps() {
        let min_eig = tm.map.min_eigenvalue();
        assert!(min_eig >= -1e-8, "{}: min eigenvalue {min_eig}", tm.target);
    }
}

#[test]
fn holdout_error_beats_two_percent_gate_on_small_cases() {
    for name in ["case5.m", "case9.m"] {
        let (_, model) = train(name, 2000, &TrainingConfig::default());
        for tm in model.all_maps() {
            assert!(
                tm.stats.val_rel_rmse <= 0.02,
                "{name} {}: relative holdout RMSE {} (range {})",
                tm.target,
                tm.stats.val_rel_rmse,
                tm.stats.target_range
            );
        }
    }
}

#[test]
fn model_json_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = train("case9.m", 300, &TrainingConfig::default());
    let p1 = dir.path().join("model.json");
    let p2 = dir.path().join("model2.json");
    model.save(&p1).unwrap();
    let loaded = SurrogateModel::<f64>::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn reload_has_zero_prediction_drift() {
    let (case, model) = train("case57.m", 300, &TrainingConfig::default());
    let json = model.to_json_string();
    let reloaded = SurrogateModel::<f64>::from_json(&json).unwrap();
    let mut rng = ccacopf::util::stream_rng(77, 0, 0);
    use rand::Rng;
    let n = case.n_buses();
    for _ in 0..100 {
        let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.1..1.1)).collect();
        for (a, b) in model.all_maps().zip(reloaded.all_maps()) {
            let pa = a.map.eval(&x);
            let pb = b.map.eval(&x);
            assert!(pa == pb, "{}: {pa} vs {pb}", a.target);
        }
    }
}

#[test]
fn hand_edited_negative_definite_map_fails_load() {
    let (_, model) = train("case9.m", 200, &TrainingConfig::default());
    let mut json = model.to_json_string();
    // Flip the first bus map's quadratic matrix sign by editing the JSON.
    let tag = "\"a\": [";
    let start = json.find(tag).unwrap() + tag.len();
    let end = start + json[start..].find(']').unwrap();
    let flipped: Vec<String> = json[start..end]
        .split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().unwrap();
            format!("{}", -x - 0.1)
        })
        .collect();
    json.replace_range(start..end, &flipped.join(", "));
    match SurrogateModel::<f64>::from_json(&json) {
        Err(TrainError::PsdViolation { .. }) | Err(TrainError::Schema(_)) => {}
        other => panic!("expected load failure, got {other:?}"),
    }
}

#[test]
fn training_is_deterministic() {
    let (_, m1) = train("case9.m", 300, &TrainingConfig::default());
    let (_, m2) = train("case9.m", 300, &TrainingConfig::default());
    assert_eq!(m1.to_json_string(), m2.to_json_string());
}
