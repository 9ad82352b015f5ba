//! Labeled training data for the surrogate: solved power-flow states with
//! their exact injections and branch flows.

use super::newton::{newton_pf, PfOptions};
use super::{eval_branch_flows, eval_injections, VoltageState};
use crate::grid::{AdmittanceMatrix, NetworkCase};
use crate::scalar::Scalar;
use crate::scenario::Scenario;
use crate::util::{domains, stream_rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataGenError {
    #[error("scenario draws keep diverging: {discarded} of {drawn} discarded")]
    TooManyDiscards { discarded: usize, drawn: usize },
    #[error("training CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One solved operating point with every labeled quantity the surrogate
/// learns. Flow vectors hold two directed entries per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample<T: Scalar> {
    /// Index of the random draw that produced this sample (not serialized;
    /// lets tests re-derive the scenario from the seed).
    pub draw: u64,
    pub x: VoltageState<T>,
    pub p_inj: Vec<T>,
    pub q_inj: Vec<T>,
    pub p_flow: Vec<T>,
    pub q_flow: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub schema: u32,
    pub case_fingerprint: String,
    pub seed: u64,
    pub range: [f64; 2],
    pub requested: usize,
    pub discarded: usize,
    /// Trusted state envelope derived from the solved operating points
    /// (stored as f64 so the sidecar is scalar-type independent).
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    /// Leading samples solved from power flow (the rest are envelope
    /// coverage states).
    pub solved_count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingSet<T: Scalar> {
    pub samples: Vec<FlowSample<T>>,
    pub meta: TrainingMeta,
}

/// One randomized operating condition: net loads plus a dispatch
/// perturbation. Surrogate maps are later evaluated at optimizer-chosen
/// dispatches, so the training data must vary the generator setpoints as
/// well as the loads; otherwise injections at fixed-dispatch buses are
/// constant and their maps degenerate. Every perturbation passes through
/// the same `[lo, hi]` factor family, so the degenerate range `[1, 1]`
/// reproduces the scheduled nominal operating point exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDraw<T: Scalar> {
    pub scenario: Scenario<T>,
    /// Active setpoint per generator: schedule shifted by
    /// `(factor − 1)·(pmax − pmin)/2`, clamped to the output box.
    pub pg: Vec<T>,
    /// Voltage setpoint per bus: `vset + (factor − 1)/10`, clamped inside
    /// the magnitude bounds (used at slack/generator buses).
    pub vset: Vec<T>,
}

/// Deterministically reconstructs training draw `d` of `seed`.
pub fn training_draw<T: Scalar>(
    case: &NetworkCase<T>,
    lo: T,
    hi: T,
    seed: u64,
    draw: u64,
) -> TrainingDraw<T> {
    use rand::distributions::{Distribution, Uniform};
    let mut rng = stream_rng(seed, domains::TRAINING, draw);
    let scenario = Scenario::sample(case, lo, hi, &mut rng);
    let dist = Uniform::new_inclusive(lo, hi);
    let pg = case
        .generators
        .iter()
        .map(|g| {
            let f = dist.sample(&mut rng);
            let span = (g.pmax - g.pmin) / T::c(2.0);
            (g.pg + (f - T::one()) * span).max(g.pmin).min(g.pmax)
        })
        .collect();
    let vset = case
        .buses
        .iter()
        .map(|b| {
            let f = dist.sample(&mut rng);
            (b.vset + (f - T::one()) / T::c(10.0))
                .max(b.vmin + T::c(0.01))
                .min(b.vmax - T::c(0.01))
        })
        .collect();
    TrainingDraw { scenario, pg, vset }
}

/// Case with a draw's dispatch perturbation applied.
pub fn apply_draw<T: Scalar>(case: &NetworkCase<T>, draw: &TrainingDraw<T>) -> NetworkCase<T> {
    let mut out = case.clone();
    for (g, &pg) in out.generators.iter_mut().zip(&draw.pg) {
        g.pg = pg;
    }
    for (b, &v) in out.buses.iter_mut().zip(&draw.vset) {
        b.vset = v;
    }
    out
}

/// Uniform state over the trusted envelope. Used for the coverage half of
/// the training set: solved operating points pin the fit where the optima
/// live, and these fill the rest of the box the scenario program can
/// reach, so the maps have no unsampled wells inside it.
pub fn envelope_state<T: Scalar>(
    envelope: &super::StateEnvelope<T>,
    seed: u64,
    draw: u64,
) -> VoltageState<T> {
    use rand::distributions::{Distribution, Uniform};
    let mut rng = stream_rng(seed, domains::TRAINING, draw);
    let x = envelope
        .lo
        .iter()
        .zip(&envelope.hi)
        .map(|(&l, &h)| Uniform::new_inclusive(l, h).sample(&mut rng))
        .collect();
    VoltageState { x }
}

/// Samples `n_samples` labeled operating states in two phases.
///
/// Phase one solves power flows at randomized operating conditions (the
/// `range` factor family scales net loads and perturbs dispatch and
/// setpoints) for the first ⌈2n/3⌉ samples; their per-coordinate span,
/// widened 1.15× plus 0.003 pu, becomes the trusted state envelope. Phase
/// two fills the remaining samples with uniform envelope states labeled
/// by direct evaluation, so the fitted maps have no unsampled wells
/// inside the region the scenario program explores.
///
/// Draws are indexed deterministically by `(seed, draw)`, evaluated in
/// parallel, and consumed in draw order, so the result is independent of
/// worker count. Non-convergent power-flow draws are discarded and
/// replaced; the generation aborts if 25 consecutive draws diverge or
/// more than half of at least 40 draws do.
pub fn generate_training_set<T: Scalar>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    n_samples: usize,
    range: (T, T),
    seed: u64,
) -> Result<TrainingSet<T>, DataGenError> {
    assert!(n_samples >= 1, "n_samples must be at least 1");
    let (lo, hi) = range;
    assert!(lo <= hi, "range must be ordered");

    const CHUNK: usize = 32;
    const MAX_CONSECUTIVE: usize = 25;

    let n_solved = (2 * n_samples).div_ceil(3);
    let mut samples: Vec<FlowSample<T>> = Vec::with_capacity(n_samples);
    let mut discarded = 0usize;
    let mut drawn = 0usize;
    let mut consecutive = 0usize;
    let mut next_draw = 0u64;

    let labeled = |d: u64, state: VoltageState<T>| -> FlowSample<T> {
        let (p_inj, q_inj) = eval_injections(&state, y);
        let (p_flow, q_flow) = eval_branch_flows(&state, case);
        FlowSample { draw: d, x: state, p_inj, q_inj, p_flow, q_flow }
    };

    while samples.len() < n_solved {
        let ids: Vec<u64> = (next_draw..next_draw + CHUNK as u64).collect();
        next_draw += CHUNK as u64;
        let solved: Vec<(u64, Option<FlowSample<T>>)> = ids
            .par_iter()
            .map(|&d| {
                let draw = training_draw(case, lo, hi, seed, d);
                let perturbed = apply_draw(case, &draw);
                let sample = newton_pf(&perturbed, y, &draw.scenario, PfOptions::default())
                    .ok()
                    .map(|sol| labeled(d, sol.state));
                (d, sample)
            })
            .collect();

        for (_, result) in solved {
            if samples.len() == n_solved {
                break;
            }
            drawn += 1;
            match result {
                Some(s) => {
                    consecutive = 0;
                    samples.push(s);
                }
                None => {
                    discarded += 1;
                    consecutive += 1;
                    if consecutive >= MAX_CONSECUTIVE || (drawn >= 40 && discarded * 2 > drawn) {
                        return Err(DataGenError::TooManyDiscards { discarded, drawn });
                    }
                }
            }
        }
    }

    let envelope = super::StateEnvelope::from_states(
        samples.iter().map(|s| s.x.x.as_slice()),
        2 * case.n_buses(),
        T::c(1.15),
        T::c(0.003),
    );

    // Phase two: envelope coverage, labeled directly (no solve needed).
    let mut fill_draw = next_draw;
    while samples.len() < n_samples {
        samples.push(labeled(fill_draw, envelope_state(&envelope, seed, fill_draw)));
        fill_draw += 1;
    }

    Ok(TrainingSet {
        samples,
        meta: TrainingMeta {
            schema: 1,
            case_fingerprint: case.fingerprint(),
            seed,
            range: [lo.as_f64(), hi.as_f64()],
            requested: n_samples,
            discarded,
            state_lo: envelope.lo.iter().map(|v| v.as_f64()).collect(),
            state_hi: envelope.hi.iter().map(|v| v.as_f64()).collect(),
            solved_count: n_solved,
        },
    })
}

impl<T: Scalar> TrainingSet<T> {
    /// Trusted envelope recorded at generation time.
    pub fn envelope(&self) -> super::StateEnvelope<T> {
        super::StateEnvelope {
            lo: self.meta.state_lo.iter().map(|&v| T::c(v)).collect(),
            hi: self.meta.state_hi.iter().map(|&v| T::c(v)).collect(),
        }
    }
}

fn csv_header<T: Scalar>(case: &NetworkCase<T>) -> String {
    let mut cols = Vec::new();
    for b in &case.buses {
        cols.push(format!("e{}", b.ext_id));
        cols.push(format!("f{}", b.ext_id));
    }
    for b in &case.buses {
        cols.push(format!("p{}", b.ext_id));
    }
    for b in &case.buses {
        cols.push(format!("q{}", b.ext_id));
    }
    for br in &case.branches {
        let (f, t) = (case.buses[br.from].ext_id, case.buses[br.to].ext_id);
        cols.push(format!("p_{f}_{t}"));
        cols.push(format!("p_{t}_{f}"));
        cols.push(format!("q_{f}_{t}"));
        cols.push(format!("q_{t}_{f}"));
    }
    cols.join(",")
}

impl<T: Scalar> TrainingSet<T> {
    /// Columnar CSV: voltage entries, injections, then directed flows.
    /// Floats print in shortest round-trip form, so write→read→write is
    /// byte-stable.
    pub fn to_csv_string(&self, case: &NetworkCase<T>) -> String {
        let mut out = csv_header(case);
        out.push('\n');
        for s in &self.samples {
            let mut row: Vec<String> = Vec::new();
            row.extend(s.x.x.iter().map(|v| v.to_string()));
            row.extend(s.p_inj.iter().map(|v| v.to_string()));
            row.extend(s.q_inj.iter().map(|v| v.to_string()));
            for k in 0..case.branches.len() {
                row.push(s.p_flow[2 * k].to_string());
                row.push(s.p_flow[2 * k + 1].to_string());
                row.push(s.q_flow[2 * k].to_string());
                row.push(s.q_flow[2 * k + 1].to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical CSV form; recorded in trained models.
    pub fn dataset_fingerprint(&self, case: &NetworkCase<T>) -> String {
        crate::util::fingerprint(self.to_csv_string(case).as_bytes())
    }
}

/// Reads samples back from the CSV produced by [`TrainingSet::to_csv_string`].
pub fn load_training_csv<T: Scalar>(
    csv: &str,
    case: &NetworkCase<T>,
    meta: TrainingMeta,
) -> Result<TrainingSet<T>, DataGenError> {
    let n = case.n_buses();
    let nbr = case.branches.len();
    let expected_cols = 4 * n + 4 * nbr;
    let mut lines = csv.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(DataGenError::Csv { line: 1, msg: "empty file".into() })?;
    let header_cols = header.split(',').count();
    if header_cols != expected_cols {
        return Err(DataGenError::Csv {
            line: 1,
            msg: format!("expected {expected_cols} columns for this case, found {header_cols}"),
        });
    }

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<T> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map(T::c)
                    .map_err(|_| DataGenError::Csv {
                        line: lineno + 1,
                        msg: format!("bad number {tok:?}"),
                    })
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != expected_cols {
            return Err(DataGenError::Csv {
                line: lineno + 1,
                msg: format!("expected {expected_cols} values, found {}", vals.len()),
            });
        }
        let x = VoltageState { x: vals[0..2 * n].to_vec() };
        let p_inj = vals[2 * n..3 * n].to_vec();
        let q_inj = vals[3 * n..4 * n].to_vec();
        let mut p_flow = vec![T::zero(); 2 * nbr];
        let mut q_flow = vec![T::zero(); 2 * nbr];
        for k in 0..nbr {
            let base = 4 * n + 4 * k;
            p_flow[2 * k] = vals[base];
            p_flow[2 * k + 1] = vals[base + 1];
            q_flow[2 * k] = vals[base + 2];
            q_flow[2 * k + 1] = vals[base + 3];
        }
        samples.push(FlowSample { draw: samples.len() as u64, x, p_inj, q_inj, p_flow, q_flow });
    }
    Ok(TrainingSet { samples, meta })
}
