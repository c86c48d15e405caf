//! Washout, training-matrix collection and closed-loop rollout, shared by the
//! quantum and classical reservoirs.
//!
//! Inputs are `T × n_in` matrices of scaled coefficients, one row per step.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{domain, Error, Result};
use crate::esn::{esn_step, EsnState};
use crate::readout::{
    clip_unit, predict, replicate_weights, ridge_fit, ReadoutWeights, TrainingMatrix,
};
use crate::reservoir::{HigherOrderReservoir, HqrcCheckpoint};

/// A reservoir driven one step at a time with a linear readout on its state.
pub trait Forecaster {
    fn n_in(&self) -> usize;

    /// Length of the feature vector the readout sees (without bias).
    fn n_features(&self) -> usize;

    fn reset(&mut self);

    /// Current readout features.
    fn features(&self) -> Vec<f64>;

    /// One teacher-forced step with true input `u`.
    fn drive(&mut self, u: &[f64]) -> Result<()>;

    /// One autoregressive step using the model's own readout.
    fn drive_closed(&mut self, readout: &ReadoutWeights) -> Result<()>;

    /// Turns freshly fitted weights into the form `drive_closed` expects.
    fn prepare_readout(&self, weights: ReadoutWeights) -> Result<ReadoutWeights> {
        Ok(weights)
    }

    fn checkpoint(&self) -> Value;

    fn restore(&mut self, cp: &Value) -> Result<()>;
}

impl Forecaster for HigherOrderReservoir {
    fn n_in(&self) -> usize {
        HigherOrderReservoir::n_in(self)
    }

    fn n_features(&self) -> usize {
        self.n_total()
    }

    fn reset(&mut self) {
        HigherOrderReservoir::reset(self)
    }

    fn features(&self) -> Vec<f64> {
        self.z().to_vec()
    }

    fn drive(&mut self, u: &[f64]) -> Result<()> {
        HigherOrderReservoir::drive(self, u).map(|_| ())
    }

    fn drive_closed(&mut self, readout: &ReadoutWeights) -> Result<()> {
        let mixed = self.mix_input_closed(readout)?;
        self.step(&mixed).map(|_| ())
    }

    fn prepare_readout(&self, weights: ReadoutWeights) -> Result<ReadoutWeights> {
        replicate_weights(&weights, self.tiling())
    }

    fn checkpoint(&self) -> Value {
        serde_json::to_value(HigherOrderReservoir::checkpoint(self)).expect("plain data")
    }

    fn restore(&mut self, cp: &Value) -> Result<()> {
        let cp: HqrcCheckpoint = serde_json::from_value(cp.clone())?;
        HigherOrderReservoir::restore(self, &cp)
    }
}

impl Forecaster for EsnState {
    fn n_in(&self) -> usize {
        EsnState::n_in(self)
    }

    fn n_features(&self) -> usize {
        self.units()
    }

    fn reset(&mut self) {
        EsnState::reset(self)
    }

    fn features(&self) -> Vec<f64> {
        self.h.as_slice().to_vec()
    }

    fn drive(&mut self, u: &[f64]) -> Result<()> {
        esn_step(self, u)
    }

    fn drive_closed(&mut self, readout: &ReadoutWeights) -> Result<()> {
        let pred = predict(readout, self.h.as_slice())?;
        esn_step(self, &pred)
    }

    fn checkpoint(&self) -> Value {
        serde_json::to_value(self.h.as_slice()).expect("plain data")
    }

    fn restore(&mut self, cp: &Value) -> Result<()> {
        let h: Vec<f64> = serde_json::from_value(cp.clone())?;
        self.set_state(&h)
    }
}

fn row(m: &DMatrix<f64>, t: usize) -> Vec<f64> {
    m.row(t).iter().copied().collect()
}

fn check_inputs(model: &dyn Forecaster, inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.ncols() != model.n_in() {
        return Err(domain(format!(
            "inputs have {} components, model expects {}",
            inputs.ncols(),
            model.n_in()
        )));
    }
    Ok(())
}

/// Resets, washes out on the first `dl` rows, then drives the remaining rows.
/// Row `k` of the result holds `[1; features after input k]` with target
/// `inputs[k + 1]`.
pub fn collect_training(
    model: &mut dyn Forecaster,
    inputs: &DMatrix<f64>,
    dl: usize,
) -> Result<TrainingMatrix> {
    check_inputs(model, inputs)?;
    let t = inputs.nrows();
    if t < dl + 2 {
        return Err(domain(format!(
            "training span of {t} steps is too short for washout {dl} plus one training pair"
        )));
    }
    model.reset();
    for k in 0..dl {
        model.drive(&row(inputs, k))?;
    }
    let mut features = Vec::with_capacity(t - dl - 1);
    let mut targets = Vec::with_capacity(t - dl - 1);
    for k in dl..t - 1 {
        model.drive(&row(inputs, k))?;
        features.push(model.features());
        targets.push(row(inputs, k + 1));
    }
    TrainingMatrix::from_rows(&features, &targets)
}

/// Washout, collection and ridge fit. Returns weights ready for
/// [`Forecaster::drive_closed`].
pub fn train(
    model: &mut dyn Forecaster,
    inputs: &DMatrix<f64>,
    dl: usize,
    beta: f64,
) -> Result<ReadoutWeights> {
    let data = collect_training(model, inputs, dl)?;
    let w = ridge_fit(&data, beta)?;
    model.prepare_readout(w)
}

/// Runs `horizon` closed-loop steps from the model's current state. Row `h`
/// of the result is the clipped prediction made before the `h`-th step, so
/// consecutive calls compose.
pub fn closed_loop(
    model: &mut dyn Forecaster,
    readout: &ReadoutWeights,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(horizon, readout.n_outputs());
    for h in 0..horizon {
        let pred = predict(readout, &model.features())?;
        out.row_mut(h).copy_from_slice(&pred);
        model.drive_closed(readout)?;
    }
    Ok(out)
}

/// Resets, warms up on `inputs[start − dl .. start]`, then forecasts
/// `horizon` steps. Row `h` predicts `inputs[start + h]`.
///
/// `perturb` is added to the last warm-up input (clipped to `[0, 1]`).
pub fn rollout(
    model: &mut dyn Forecaster,
    readout: &ReadoutWeights,
    inputs: &DMatrix<f64>,
    start: usize,
    dl: usize,
    horizon: usize,
    perturb: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    warm_up(model, inputs, start, dl, perturb)?;
    closed_loop(model, readout, horizon)
}

/// The warm-up phase of [`rollout`] on its own.
pub fn warm_up(
    model: &mut dyn Forecaster,
    inputs: &DMatrix<f64>,
    start: usize,
    dl: usize,
    perturb: Option<&[f64]>,
) -> Result<()> {
    check_inputs(model, inputs)?;
    if start < dl || start > inputs.nrows() {
        return Err(domain(format!(
            "start index {start} needs {dl} warm-up inputs before it within {} rows",
            inputs.nrows()
        )));
    }
    if perturb.is_some() && dl == 0 {
        return Err(domain("a perturbation needs at least one warm-up input"));
    }
    model.reset();
    for k in start - dl..start {
        let mut u = row(inputs, k);
        if let (Some(p), true) = (perturb, k + 1 == start) {
            if p.len() != u.len() {
                return Err(domain("perturbation length differs from the input width"));
            }
            let shifted: Vec<f64> = u.iter().zip(p).map(|(a, b)| a + b).collect();
            u = clip_unit(&shifted)?;
        }
        model.drive(&u)?;
    }
    Ok(())
}

/// Mid-rollout snapshot: model state plus the number of steps already taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutCheckpoint {
    pub steps_done: usize,
    pub state: Value,
}

pub fn checkpoint_rollout(model: &dyn Forecaster, steps_done: usize) -> RolloutCheckpoint {
    RolloutCheckpoint {
        steps_done,
        state: model.checkpoint(),
    }
}

/// Restores `cp` and runs the remaining `horizon − steps_done` steps.
pub fn resume_rollout(
    model: &mut dyn Forecaster,
    readout: &ReadoutWeights,
    cp: &RolloutCheckpoint,
    horizon: usize,
) -> Result<DMatrix<f64>> {
    if cp.steps_done > horizon {
        return Err(Error::State(
            "checkpoint is past the requested horizon".into(),
        ));
    }
    model.restore(&cp.state)?;
    closed_loop(model, readout, horizon - cp.steps_done)
}

/// Repeats the last input before `start` for `horizon` steps.
pub fn persistence(inputs: &DMatrix<f64>, start: usize, horizon: usize) -> Result<DMatrix<f64>> {
    if start == 0 || start > inputs.nrows() {
        return Err(domain("persistence needs an input before the start index"));
    }
    let last = inputs.row(start - 1);
    Ok(DMatrix::from_fn(horizon, inputs.ncols(), |_, j| last[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esn::{esn_init, EsnConfig};
    use crate::reservoir::HqrcConfig;

    fn series(t: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(t, n, |k, j| 0.5 + 0.4 * ((k as f64) * 0.3 + j as f64).sin())
    }

    fn small_hqrc() -> HigherOrderReservoir {
        let cfg = HqrcConfig {
            n_qubits: 3,
            n_reservoirs: 2,
            v_nodes: 2,
            ..HqrcConfig::default()
        };
        HigherOrderReservoir::new(&cfg, 2).unwrap()
    }

    #[test]
    fn training_rows_and_targets() {
        let inputs = series(12, 2);
        let mut m = small_hqrc();
        let tm = collect_training(&mut m, &inputs, 4).unwrap();
        assert_eq!(tm.rows(), 7);
        assert_eq!(tm.cols(), 1 + 12);
        assert_eq!(tm.targets().row(0), inputs.row(5));
        assert!(collect_training(&mut m, &inputs, 11).is_err());
    }

    #[test]
    fn horizon_one_is_a_single_prediction() {
        let inputs = series(40, 2);
        let mut m = small_hqrc();
        let w = train(&mut m, &inputs, 5, 1e-6).unwrap();
        let out = rollout(&mut m, &w, &inputs, 20, 5, 1, None).unwrap();
        warm_up(&mut m, &inputs, 20, 5, None).unwrap();
        let direct = predict(&w, &m.features()).unwrap();
        assert_eq!(out.row(0).iter().copied().collect::<Vec<_>>(), direct);
        assert!(rollout(&mut m, &w, &inputs, 3, 5, 1, None).is_err());
    }

    #[test]
    fn resume_matches_single_call() {
        let inputs = series(40, 2);
        let mut m = small_hqrc();
        let w = train(&mut m, &inputs, 5, 1e-6).unwrap();
        let full = rollout(&mut m, &w, &inputs, 20, 5, 12, None).unwrap();

        let head = rollout(&mut m, &w, &inputs, 20, 5, 5, None).unwrap();
        let cp = serde_json::to_string(&checkpoint_rollout(&m, 5)).unwrap();
        let mut fresh = small_hqrc();
        let tail = resume_rollout(&mut fresh, &w, &serde_json::from_str(&cp).unwrap(), 12).unwrap();
        assert_eq!(full.rows(0, 5), head);
        assert_eq!(full.rows(5, 7), tail);
    }

    #[test]
    fn esn_ar1_fit_is_near_exact() {
        // u_{k+1} = 0.5 + 0.8 (u_k − 0.5) + small drive: a linear map of the
        // input, which the readout recovers through tanh's linear regime.
        let mut u = vec![0.5];
        for k in 0..300 {
            let last = u[k];
            u.push(0.5 + 0.8 * (last - 0.5) + 0.05 * ((k as f64) * 1.7).sin());
        }
        let inputs = DMatrix::from_column_slice(u.len(), 1, &u);
        let cfg = EsnConfig {
            units: 60,
            input_scale: 0.1,
            ridge_beta: 1e-12,
            ..EsnConfig::default()
        };
        let mut esn = esn_init(&cfg, 1).unwrap();
        let tm = collect_training(&mut esn, &inputs, 40).unwrap();
        let w = ridge_fit(&tm, 1e-12).unwrap();
        let fit = tm.x() * &w.w;
        let err = (fit - tm.targets()).amax();
        assert!(err < 1e-3, "one-step error {err}");
    }

    #[test]
    fn persistence_repeats_last_input() {
        let inputs = series(10, 3);
        let p = persistence(&inputs, 4, 5).unwrap();
        for h in 0..5 {
            assert_eq!(p.row(h), inputs.row(3));
        }
        assert!(persistence(&inputs, 0, 5).is_err());
    }

    #[test]
    fn perturbation_changes_only_with_epsilon() {
        let inputs = series(40, 2);
        let mut m = small_hqrc();
        let w = train(&mut m, &inputs, 5, 1e-6).unwrap();
        let base = rollout(&mut m, &w, &inputs, 20, 5, 8, None).unwrap();
        let zero = rollout(&mut m, &w, &inputs, 20, 5, 8, Some(&[0.0, 0.0])).unwrap();
        let bumped = rollout(&mut m, &w, &inputs, 20, 5, 8, Some(&[1e-3, -1e-3])).unwrap();
        assert_eq!(base, zero);
        assert_ne!(base, bumped);
        assert!(rollout(&mut m, &w, &inputs, 20, 0, 8, Some(&[0.0, 0.0])).is_err());
    }
}
