//! Boosted convexity-constrained quadratic regression.
//!
//! Base learner: unconstrained least squares over the full quadratic
//! monomial basis, eigenvalue clipping of the quadratic coefficient matrix
//! onto the PSD cone, then a linear/constant refit against the projection
//! residual. Boosting: squared loss, so each round's negative gradient is
//! the plain residual; rounds accumulate with a constant step or the
//! closed-form line-search step ⟨r,h⟩/⟨h,h⟩.

use super::{
    FitStats, QuadraticMap, SurrogateModel, TargetId, TrainError, TrainedMap, TrainingConfig,
    MODEL_SCHEMA,
};
use crate::acpf::{branch_feature_indices, bus_feature_indices, TrainingSet};
use crate::grid::{AdmittanceMatrix, NetworkCase};
use crate::scalar::Scalar;
use crate::util::{domains, stream_rng};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
}

/// Per-round training log across all targets, exportable as CSV.
#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub rows: Vec<(String, RoundStats)>,
}

impl TrainingReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("target,round,train_rmse,val_rmse\n");
        for (target, s) in &self.rows {
            let val = s.val_rmse.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{target},{},{},{val}\n", s.round, s.train_rmse));
        }
        out
    }
}

/// Precomputed design for one feature subset: monomial matrix and the
/// factorizations reused by every boosting round.
struct Design<T: Scalar> {
    k: usize,
    pairs: Vec<(usize, usize)>,
    z: DMatrix<T>,
    mono_train: DMatrix<T>,
    train_rows: Vec<usize>,
    val_rows: Vec<usize>,
    /// Square roots of per-row fit weights (aligned with `train_rows`).
    sqrt_w: Vec<T>,
    chol_full: Cholesky<T, Dyn>,
    chol_lin: Cholesky<T, Dyn>,
}

impl<T: Scalar> Design<T> {
    fn new(
        z: DMatrix<T>,
        train_rows: Vec<usize>,
        val_rows: Vec<usize>,
        ridge: T,
        weights: Option<&[T]>,
    ) -> Result<Self, TrainError> {
        let k = z.ncols();
        let mut pairs = Vec::with_capacity(k * (k + 1) / 2);
        for a in 0..k {
            for b in a..k {
                pairs.push((a, b));
            }
        }
        let nf = 1 + k + pairs.len();

        let sqrt_w: Vec<T> = train_rows
            .iter()
            .map(|&m| weights.map(|w| w[m].sqrt()).unwrap_or_else(T::one))
            .collect();
        let mut mono_train = DMatrix::<T>::zeros(train_rows.len(), nf);
        for (row, &m) in train_rows.iter().enumerate() {
            let sw = sqrt_w[row];
            mono_train[(row, 0)] = sw;
            for j in 0..k {
                mono_train[(row, 1 + j)] = sw * z[(m, j)];
            }
            for (pix, &(a, b)) in pairs.iter().enumerate() {
                mono_train[(row, 1 + k + pix)] = sw * z[(m, a)] * z[(m, b)];
            }
        }

        let mut gram = mono_train.transpose() * &mono_train;
        for d in 1..nf {
            gram[(d, d)] += ridge;
        }
        let lin = 1 + k;
        let gram_lin = gram.view((0, 0), (lin, lin)).into_owned();

        let chol_full =
            Cholesky::new(gram).ok_or(TrainError::IllPosedFit(None))?;
        let chol_lin =
            Cholesky::new(gram_lin).ok_or(TrainError::IllPosedFit(None))?;
        Ok(Design { k, pairs, z, mono_train, train_rows, val_rows, sqrt_w, chol_full, chol_lin })
    }

    fn predictions(&self, map: &QuadraticMap<T>, rows: &[usize], out: &mut [T]) {
        let k = self.k;
        let mut zrow = vec![T::zero(); k];
        for (slot, &m) in rows.iter().enumerate() {
            for j in 0..k {
                zrow[j] = self.z[(m, j)];
            }
            out[slot] = map.eval_features(&zrow);
        }
    }

    /// Unconstrained least-squares fit of `residuals` over the quadratic
    /// monomials, returned as a symmetric coefficient matrix.
    fn ls_quad(&self, residuals: &DVector<T>) -> DMatrix<T> {
        let k = self.k;
        let weighted =
            DVector::from_iterator(residuals.len(), residuals.iter().zip(&self.sqrt_w).map(|(r, w)| *r * *w));
        let rhs = self.mono_train.transpose() * weighted;
        let w = self.chol_full.solve(&rhs);
        let mut a = DMatrix::<T>::zeros(k, k);
        for (pix, &(r, cix)) in self.pairs.iter().enumerate() {
            let coeff = w[1 + k + pix];
            if r == cix {
                a[(r, r)] += coeff;
            } else {
                let half = coeff / T::c(2.0);
                a[(r, cix)] += half;
                a[(cix, r)] += half;
            }
        }
        a
    }

    /// Least-squares refit of the linear and constant terms against
    /// `target` (aligned with train rows).
    fn refit_linear(&self, target: &DVector<T>) -> (Vec<T>, T) {
        let lin = 1 + self.k;
        let weighted =
            DVector::from_iterator(target.len(), target.iter().zip(&self.sqrt_w).map(|(r, w)| *r * *w));
        let rhs_lin = self.mono_train.columns(0, lin).transpose() * weighted;
        let w_lin = self.chol_lin.solve(&rhs_lin);
        (w_lin.as_slice()[1..].to_vec(), w_lin[0])
    }

    /// One base-learner fit against `residuals`: LS quadratic, eigenvalue
    /// clip, linear refit holding the clipped quadratic fixed. The
    /// quadratic part is clipped relative to `carry` (the ensemble's
    /// accumulated quadratic), which lets later rounds redistribute
    /// curvature instead of only ever adding it; with a zero carry this is
    /// the plain projected fit.
    fn fit_base(&self, residuals: &DVector<T>, carry: &DMatrix<T>) -> QuadraticMap<T> {
        let k = self.k;
        let a_proj = clip_psd(&(carry + self.ls_quad(residuals)));

        let quad_map = QuadraticMap {
            features: (0..k).collect(),
            a: mat_to_rows(&a_proj),
            b: vec![T::zero(); k],
            c: T::zero(),
        };
        let mut quad_pred = vec![T::zero(); self.train_rows.len()];
        self.predictions(&quad_map, &self.train_rows, &mut quad_pred);
        // Residual of the projected quadratic relative to the carried one.
        let carry_map = QuadraticMap {
            features: (0..k).collect(),
            a: mat_to_rows(carry),
            b: vec![T::zero(); k],
            c: T::zero(),
        };
        let mut carry_pred = vec![T::zero(); self.train_rows.len()];
        self.predictions(&carry_map, &self.train_rows, &mut carry_pred);
        let lin_target = DVector::from_iterator(
            residuals.len(),
            residuals
                .iter()
                .zip(&quad_pred)
                .zip(&carry_pred)
                .map(|((r, q), cp)| *r - (*q - *cp)),
        );
        let (b, c) = self.refit_linear(&lin_target);

        // The learner is the increment from the carried quadratic to the
        // projected one, so accumulating it reproduces the projection.
        let mut a_inc = mat_to_rows(&a_proj);
        for (v, cv) in a_inc.iter_mut().zip(carry_map.a.iter()) {
            *v -= *cv;
        }
        QuadraticMap { features: (0..k).collect(), a: a_inc, b, c }
    }
}

fn mat_to_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    m.transpose().as_slice().to_vec()
}

/// Eigenvalue clipping onto the PSD cone, symmetrized.
fn clip_psd<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let k = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let mut clipped = DMatrix::<T>::zeros(k, k);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > T::zero() {
            let u = eig.eigenvectors.column(i);
            for r in 0..k {
                for cix in 0..k {
                    clipped[(r, cix)] += lam * u[r] * u[cix];
                }
            }
        }
    }
    for r in 0..k {
        for cix in 0..r {
            let sym = (clipped[(r, cix)] + clipped[(cix, r)]) / T::c(2.0);
            clipped[(r, cix)] = sym;
            clipped[(cix, r)] = sym;
        }
    }
    clipped
}

fn rmse<T: Scalar>(err: impl Iterator<Item = T>, n: usize) -> T {
    if n == 0 {
        return T::zero();
    }
    let ss: T = err.map(|e| e * e).sum();
    (ss / T::c(n as f64)).sqrt()
}

/// Least-squares quadratic fit with PSD projection and linear refit. The
/// returned map addresses its features locally (`0..k`). Also returns the
/// training RMSE of the fit.
pub fn fit_base_learner<T: Scalar>(
    features: &DMatrix<T>,
    residuals: &[T],
    ridge: T,
) -> Result<(QuadraticMap<T>, T), TrainError> {
    let m = features.nrows();
    assert_eq!(m, residuals.len(), "sample counts");
    let design = Design::new(features.clone(), (0..m).collect(), Vec::new(), ridge, None)?;
    let r = DVector::from_column_slice(residuals);
    let zero_carry = DMatrix::<T>::zeros(features.ncols(), features.ncols());
    let map = design.fit_base(&r, &zero_carry);
    let mut pred = vec![T::zero(); m];
    design.predictions(&map, &design.train_rows, &mut pred);
    let loss = rmse(residuals.iter().zip(&pred).map(|(y, p)| *y - *p), m);
    Ok((map, loss))
}

/// Boosted fit of one target column. Returns the collapsed ensemble (local
/// feature indices), the per-round log, and holdout statistics.
pub fn fit_boosted<T: Scalar>(
    features: &DMatrix<T>,
    targets: &[T],
    config: &TrainingConfig,
) -> Result<(QuadraticMap<T>, Vec<RoundStats>, FitStats<T>), TrainError> {
    fit_boosted_weighted(features, targets, config, None)
}

/// [`fit_boosted`] with optional per-sample fit weights (solved operating
/// points get more pull than envelope coverage states).
pub fn fit_boosted_weighted<T: Scalar>(
    features: &DMatrix<T>,
    targets: &[T],
    config: &TrainingConfig,
    weights: Option<&[T]>,
) -> Result<(QuadraticMap<T>, Vec<RoundStats>, FitStats<T>), TrainError> {
    config.validate()?;
    let m = features.nrows();
    assert_eq!(m, targets.len(), "sample counts");

    // Deterministic holdout split shared by every target.
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = stream_rng(config.seed, domains::SPLIT, 0);
    order.shuffle(&mut rng);
    let n_val = ((m as f64) * config.val_fraction).floor() as usize;
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut val_rows = val_rows.to_vec();
    let mut train_rows = train_rows.to_vec();
    val_rows.sort_unstable();
    train_rows.sort_unstable();
    if train_rows.is_empty() {
        return Err(TrainError::Schema("no training rows after split".into()));
    }

    let design = Design::new(features.clone(), train_rows, val_rows, T::c(config.ridge), weights)?;
    let y_train: Vec<T> = design.train_rows.iter().map(|&r| targets[r]).collect();
    let y_val: Vec<T> = design.val_rows.iter().map(|&r| targets[r]).collect();

    let mean: T = y_train.iter().copied().sum::<T>() / T::c(y_train.len() as f64);
    let mut pred_train = vec![mean; y_train.len()];
    let mut pred_val = vec![mean; y_val.len()];

    let val_rmse_now = |pv: &[T]| -> Option<T> {
        if y_val.is_empty() {
            None
        } else {
            Some(rmse(y_val.iter().zip(pv).map(|(y, p)| *y - *p), y_val.len()))
        }
    };

    let mut rounds: Vec<(T, QuadraticMap<T>)> = Vec::new();
    let mut log = Vec::new();
    let init_val = val_rmse_now(&pred_val);
    let mut best_val = init_val;
    let mut best_round = 0usize;

    let k = features.ncols();
    let mut h_train = vec![T::zero(); y_train.len()];
    let mut h_val = vec![T::zero(); y_val.len()];
    let mut carry = DMatrix::<T>::zeros(k, k);
    for t in 1..=config.rounds {
        // Squared loss: the negative gradient is the residual itself.
        let r = DVector::from_iterator(
            y_train.len(),
            y_train.iter().zip(&pred_train).map(|(y, p)| *y - *p),
        );
        let base = design.fit_base(&r, &carry);
        design.predictions(&base, &design.train_rows, &mut h_train);
        design.predictions(&base, &design.val_rows, &mut h_val);

        // Steps stay within (0, 1]: the updated quadratic is then a convex
        // combination of two PSD matrices.
        let rho = if config.line_search {
            let rh: T = r.iter().zip(&h_train).map(|(a, b)| *a * *b).sum();
            let hh: T = h_train.iter().map(|h| *h * *h).sum();
            if hh <= T::zero() {
                T::zero()
            } else {
                (rh / hh).min(T::one())
            }
        } else {
            T::c(config.learn_rate)
        };
        if !(rho > T::zero()) || !rho.is_finite() {
            break; // learner carries no usable signal
        }

        for (p, h) in pred_train.iter_mut().zip(&h_train) {
            *p += rho * *h;
        }
        for (p, h) in pred_val.iter_mut().zip(&h_val) {
            *p += rho * *h;
        }
        for rix in 0..k {
            for cix in 0..k {
                carry[(rix, cix)] += rho * base.a[rix * k + cix];
            }
        }
        rounds.push((rho, base));

        let train_rmse_t =
            rmse(y_train.iter().zip(&pred_train).map(|(y, p)| *y - *p), y_train.len());
        let val_rmse_t = val_rmse_now(&pred_val);
        if !train_rmse_t.is_finite()
            || val_rmse_t.map(|v| !v.is_finite()).unwrap_or(false)
        {
            return Err(TrainError::Diverged { target: String::new(), round: t });
        }
        log.push(RoundStats {
            round: t,
            train_rmse: train_rmse_t.as_f64(),
            val_rmse: val_rmse_t.map(|v| v.as_f64()),
        });

        match val_rmse_t {
            Some(v) => {
                if best_val.map(|b| v < b).unwrap_or(true) {
                    best_val = Some(v);
                    best_round = t;
                } else if t - best_round >= config.patience {
                    break;
                }
            }
            None => best_round = t,
        }
    }

    // Collapse the ensemble, truncated at the best validated round.
    let k = features.ncols();
    let mut final_map = QuadraticMap::zero((0..k).collect());
    final_map.c = mean;
    for (rho, base) in rounds.iter().take(best_round) {
        for (acc, v) in final_map.a.iter_mut().zip(&base.a) {
            *acc += *rho * *v;
        }
        for (acc, v) in final_map.b.iter_mut().zip(&base.b) {
            *acc += *rho * *v;
        }
        final_map.c += *rho * base.c;
    }

    let mut final_train = vec![T::zero(); y_train.len()];
    let mut final_val = vec![T::zero(); y_val.len()];
    design.predictions(&final_map, &design.train_rows, &mut final_train);
    design.predictions(&final_map, &design.val_rows, &mut final_val);
    let train_rmse_final =
        rmse(y_train.iter().zip(&final_train).map(|(y, p)| *y - *p), y_train.len());
    let val_rmse_final = if y_val.is_empty() {
        train_rmse_final
    } else {
        rmse(y_val.iter().zip(&final_val).map(|(y, p)| *y - *p), y_val.len())
    };

    let lo = targets.iter().copied().fold(T::c(f64::INFINITY), |m, v| m.min(v));
    let hi = targets.iter().copied().fold(T::c(f64::NEG_INFINITY), |m, v| m.max(v));
    // Constant targets (e.g. injections at unloaded generator buses) have
    // ranges at solver-noise level; floor the denominator at 1e-6 pu so
    // the relative error stays meaningful.
    let range = (hi - lo).max(T::c(1e-6));
    let stats = FitStats {
        rounds_used: best_round,
        train_rmse: train_rmse_final,
        val_rmse: val_rmse_final,
        val_rel_rmse: val_rmse_final / range,
        target_range: hi - lo,
    };
    Ok((final_map, log, stats))
}

fn gather_features<T: Scalar>(data: &TrainingSet<T>, idx: &[usize]) -> DMatrix<T> {
    let m = data.samples.len();
    let mut z = DMatrix::<T>::zeros(m, idx.len());
    for (row, s) in data.samples.iter().enumerate() {
        for (col, &g) in idx.iter().enumerate() {
            z[(row, col)] = s.x.x[g];
        }
    }
    z
}

fn target_column<T: Scalar>(data: &TrainingSet<T>, target: TargetId) -> Vec<T> {
    data.samples
        .iter()
        .map(|s| match target {
            TargetId::BusP { bus } => s.p_inj[bus],
            TargetId::BusQ { bus } => s.q_inj[bus],
            TargetId::BranchP { branch, reverse } => s.p_flow[2 * branch + reverse as usize],
            TargetId::BranchQ { branch, reverse } => s.q_flow[2 * branch + reverse as usize],
        })
        .collect()
}

/// Fits every constrained quantity of the case and assembles the model.
/// Targets are independent and fitted in parallel; output is ordered and
/// deterministic.
pub fn train_all<T: Scalar>(
    case: &NetworkCase<T>,
    y: &AdmittanceMatrix<T>,
    data: &TrainingSet<T>,
    config: &TrainingConfig,
) -> Result<(SurrogateModel<T>, TrainingReport), TrainError> {
    config.validate()?;
    let n = case.n_buses();
    let mut targets: Vec<(TargetId, Vec<usize>)> = Vec::new();
    for i in 0..n {
        targets.push((TargetId::BusP { bus: i }, bus_feature_indices(y, i)));
    }
    for i in 0..n {
        targets.push((TargetId::BusQ { bus: i }, bus_feature_indices(y, i)));
    }
    for (k, br) in case.branches.iter().enumerate() {
        for reverse in [false, true] {
            let idx = if reverse {
                branch_feature_indices(br.to, br.from)
            } else {
                branch_feature_indices(br.from, br.to)
            };
            targets.push((TargetId::BranchP { branch: k, reverse }, idx));
        }
    }
    for (k, br) in case.branches.iter().enumerate() {
        for reverse in [false, true] {
            let idx = if reverse {
                branch_feature_indices(br.to, br.from)
            } else {
                branch_feature_indices(br.from, br.to)
            };
            targets.push((TargetId::BranchQ { branch: k, reverse }, idx));
        }
    }

    // Solved operating points anchor the fit where the optimizer's active
    // constraints live; coverage states only need to block off-manifold
    // wells, so they carry less weight.
    let weights: Vec<T> = (0..data.samples.len())
        .map(|m| if m < data.meta.solved_count { T::c(25.0) } else { T::one() })
        .collect();
    let fitted: Vec<Result<(TrainedMap<T>, Vec<RoundStats>), TrainError>> = targets
        .par_iter()
        .map(|(target, idx)| {
            let z = gather_features(data, idx);
            let yv = target_column(data, *target);
            let (mut map, log, stats) = fit_boosted_weighted(&z, &yv, config, Some(&weights))
                .map_err(|e| match e {
                TrainError::IllPosedFit(_) => TrainError::IllPosedFit(Some(target.to_string())),
                TrainError::Diverged { round, .. } => {
                    TrainError::Diverged { target: target.to_string(), round }
                }
                other => other,
            })?;
            map.features = idx.clone();
            Ok((TrainedMap { target: *target, map, stats }, log))
        })
        .collect();

    let mut bus_p = Vec::new();
    let mut bus_q = Vec::new();
    let mut branch_p: Vec<[TrainedMap<T>; 2]> = Vec::new();
    let mut branch_q: Vec<[TrainedMap<T>; 2]> = Vec::new();
    let mut report = TrainingReport::default();
    let mut pending: Option<TrainedMap<T>> = None;
    for item in fitted {
        let (tm, log) = item?;
        let name = tm.target.to_string();
        for s in log {
            report.rows.push((name.clone(), s));
        }
        match tm.target {
            TargetId::BusP { .. } => bus_p.push(tm),
            TargetId::BusQ { .. } => bus_q.push(tm),
            TargetId::BranchP { reverse, .. } | TargetId::BranchQ { reverse, .. } => {
                if !reverse {
                    pending = Some(tm);
                } else {
                    let fwd = pending.take().expect("forward map precedes reverse");
                    let pair = [fwd, tm];
                    if matches!(pair[0].target, TargetId::BranchP { .. }) {
                        branch_p.push(pair);
                    } else {
                        branch_q.push(pair);
                    }
                }
            }
        }
    }

    let envelope = data.envelope();
    let model = SurrogateModel {
        schema: MODEL_SCHEMA,
        case_fingerprint: case.fingerprint(),
        dataset_fingerprint: data.dataset_fingerprint(case),
        config: config.clone(),
        state_lo: envelope.lo,
        state_hi: envelope.hi,
        bus_p,
        bus_q,
        branch_p,
        branch_q,
    };
    model.validate()?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_features(m: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 0, 0);
        DMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn psd_map(k: usize, seed: u64) -> QuadraticMap<f64> {
        let mut rng = stream_rng(seed, 1, 0);
        let m = DMatrix::<f64>::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
        let a = m.transpose() * &m;
        QuadraticMap {
            features: (0..k).collect(),
            a: a.transpose().as_slice().to_vec(),
            b: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            c: rng.gen_range(-1.0..1.0),
        }
    }

    #[test]
    fn base_learner_recovers_planted_psd_quadratic() {
        let truth = psd_map(3, 5);
        let z = random_features(400, 3, 6);
        let y: Vec<f64> = (0..400)
            .map(|m| truth.eval_features(&[z[(m, 0)], z[(m, 1)], z[(m, 2)]]))
            .collect();
        let (fit, loss) = fit_base_learner(&z, &y, 0.0).unwrap();
        assert!(loss <= 1e-9, "loss {loss}");
        for (a, b) in fit.a.iter().zip(&truth.a) {
            assert!((a - b).abs() <= 1e-6, "quadratic coeff {a} vs {b}");
        }
        for (a, b) in fit.b.iter().zip(&truth.b) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!((fit.c - truth.c).abs() <= 1e-6);
    }

    #[test]
    fn concave_target_clips_to_linear_fit() {
        let z = random_features(500, 1, 7);
        let y: Vec<f64> = (0..500).map(|m| -z[(m, 0)] * z[(m, 0)]).collect();
        let (fit, _) = fit_base_learner(&z, &y, 0.0).unwrap();
        assert_eq!(fit.a, vec![0.0], "negative curvature must clip to zero");
        let mean_y: f64 = y.iter().sum::<f64>() / 500.0;
        assert!((fit.c - mean_y).abs() < 0.05, "intercept near mean of target");
    }

    #[test]
    fn constant_residuals_fit_into_intercept() {
        let z = random_features(200, 2, 8);
        let y = vec![3.25; 200];
        let (fit, loss) = fit_base_learner(&z, &y, 1e-8).unwrap();
        assert!(loss <= 1e-9);
        assert!((fit.c - 3.25).abs() <= 1e-7);
        assert!(fit.b.iter().all(|v| v.abs() <= 1e-6));
        assert!(fit.a.iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn rank_deficient_design_without_ridge_errors() {
        // Feature column duplicated: design has dependent columns.
        let base = random_features(50, 1, 9);
        let z = DMatrix::from_fn(50, 2, |r, _| base[(r, 0)]);
        let y: Vec<f64> = (0..50).map(|m| z[(m, 0)]).collect();
        match fit_base_learner(&z, &y, 0.0) {
            Err(TrainError::IllPosedFit(_)) => {}
            other => panic!("expected ill-posed fit, got {other:?}"),
        }
    }

    #[test]
    fn single_round_unit_rate_equals_mean_plus_base_fit() {
        let z = random_features(300, 2, 10);
        let truth = psd_map(2, 11);
        let y: Vec<f64> =
            (0..300).map(|m| truth.eval_features(&[z[(m, 0)], z[(m, 1)]])).collect();

        let config = TrainingConfig {
            rounds: 1,
            learn_rate: 1.0,
            val_fraction: 0.0,
            ridge: 0.0,
            ..TrainingConfig::default()
        };
        let (boosted, _, _) = fit_boosted(&z, &y, &config).unwrap();

        let mean: f64 = y.iter().sum::<f64>() / y.len() as f64;
        let centered: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let (base, _) = fit_base_learner(&z, &centered, 0.0).unwrap();
        for (a, b) in boosted.a.iter().zip(&base.a) {
            assert!((a - b).abs() <= 1e-9);
        }
        for (a, b) in boosted.b.iter().zip(&base.b) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((boosted.c - (mean + base.c)).abs() <= 1e-9);
    }

    #[test]
    fn plant_and_recover_converges_within_three_rounds() {
        let truth = psd_map(4, 12);
        let z = random_features(600, 4, 13);
        let y: Vec<f64> = (0..600)
            .map(|m| truth.eval_features(&[z[(m, 0)], z[(m, 1)], z[(m, 2)], z[(m, 3)]]))
            .collect();
        let config = TrainingConfig {
            rounds: 3,
            line_search: true,
            val_fraction: 0.2,
            ridge: 0.0,
            ..TrainingConfig::default()
        };
        let (_, log, stats) = fit_boosted(&z, &y, &config).unwrap();
        assert!(stats.val_rmse <= 1e-6, "val rmse {}", stats.val_rmse);
        assert!(log.len() <= 3);
    }

    #[test]
    fn line_search_training_loss_is_monotone() {
        // Non-representable target (indefinite + cubic) keeps residuals
        // alive for many rounds.
        let z = random_features(400, 3, 14);
        let y: Vec<f64> = (0..400)
            .map(|m| {
                let (a, b, c) = (z[(m, 0)], z[(m, 1)], z[(m, 2)]);
                a * a - 2.0 * b * b + 0.5 * a * b * c + 0.3 * c
            })
            .collect();
        let config = TrainingConfig {
            rounds: 20,
            line_search: true,
            val_fraction: 0.0,
            ..TrainingConfig::default()
        };
        let (_, log, _) = fit_boosted(&z, &y, &config).unwrap();
        for w in log.windows(2) {
            assert!(
                w[1].train_rmse <= w[0].train_rmse + 1e-12,
                "round {}: {} > {}",
                w[1].round,
                w[1].train_rmse,
                w[0].train_rmse
            );
        }
    }

    #[test]
    fn nan_targets_report_divergence() {
        let z = random_features(100, 2, 15);
        let mut y = vec![1.0; 100];
        y[3] = f64::NAN;
        match fit_boosted(&z, &y, &TrainingConfig::default()) {
            Err(TrainError::Diverged { round, .. }) => assert_eq!(round, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn boosted_gradient_matches_finite_differences() {
        // d/dp̃ ½(y − p̃)² = −(y − p̃): the analytic negative gradient is the
        // residual; check against central differences of the loss.
        let y = 2.0f64;
        let loss = |p: f64| 0.5 * (y - p) * (y - p);
        for p in [-1.0, 0.0, 0.5, 3.7] {
            let h = 1e-6;
            let fd = (loss(p + h) - loss(p - h)) / (2.0 * h);
            let analytic_neg_gradient = y - p;
            assert!((-fd - analytic_neg_gradient).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }
}
