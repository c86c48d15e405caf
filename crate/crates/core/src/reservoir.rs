//! Quantum reservoirs with temporal multiplexing, and the higher-order
//! ensemble that couples them through a fixed classical feedback matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fmt_param;
use crate::par::{self, Execution};
use crate::quantum::{
    build_hamiltonian, propagator, DensityMatrix, EigenFrame, IsingParams, ObservableSet,
    UnitaryPropagator,
};
use crate::readout::{clip_unit, linear_output, ReadoutWeights};
use crate::rng::{tag, Stream};

/// One spin-network reservoir read out at `V` equally spaced substeps of `τ`.
#[derive(Debug, Clone)]
pub struct QuantumReservoir {
    params: IsingParams,
    tau: f64,
    v_nodes: usize,
    propagator: UnitaryPropagator,
    frame: EigenFrame,
    /// State in the Hamiltonian eigenbasis, `Qᵀ ρ Q`, split into real and
    /// imaginary parts.
    re: DMatrix<f64>,
    im: DMatrix<f64>,
    observables: ObservableSet,
}

impl QuantumReservoir {
    /// Starts from the maximally mixed state.
    pub fn new(params: IsingParams, tau: f64, v_nodes: usize) -> Result<Self> {
        if v_nodes == 0 {
            return Err(domain("at least one virtual node is required"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(domain(format!(
                "evolution interval tau must be positive, got {tau}"
            )));
        }
        let h = build_hamiltonian(&params);
        let dt = tau / v_nodes as f64;
        let observables = ObservableSet::pauli_z(params.n_qubits)?;
        let frame = EigenFrame::new(&h, dt, &observables)?;
        let propagator = propagator(&h, dt)?;
        let (re, im) = frame.enter(&DensityMatrix::maximally_mixed(params.n_qubits)?);
        Ok(Self {
            params,
            tau,
            v_nodes,
            propagator,
            frame,
            re,
            im,
            observables,
        })
    }

    pub fn params(&self) -> &IsingParams {
        &self.params
    }

    pub fn n_qubits(&self) -> usize {
        self.params.n_qubits
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn v_nodes(&self) -> usize {
        self.v_nodes
    }

    /// The `τ/V` substep propagator.
    pub fn propagator(&self) -> &UnitaryPropagator {
        &self.propagator
    }

    pub fn observables(&self) -> &ObservableSet {
        &self.observables
    }

    /// Current density matrix in the computational basis.
    pub fn state(&self) -> DensityMatrix {
        self.frame
            .leave(&self.re, &self.im)
            .expect("frame dimension is a power of two")
    }

    pub fn set_state(&mut self, state: DensityMatrix) -> Result<()> {
        if state.dim() != self.frame.dim() {
            return Err(domain("state dimension does not match the reservoir"));
        }
        (self.re, self.im) = self.frame.enter(&state);
        Ok(())
    }

    /// Eigen-frame coordinates `(Re, Im)` of `Qᵀ ρ Q`.
    pub fn frame_state(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.re, &self.im)
    }

    pub fn set_frame_state(&mut self, re: DMatrix<f64>, im: DMatrix<f64>) -> Result<()> {
        let d = self.frame.dim();
        if re.shape() != (d, d) || im.shape() != (d, d) {
            return Err(domain("state dimension does not match the reservoir"));
        }
        self.re = re;
        self.im = im;
        Ok(())
    }

    /// Signals per step, `N·V`.
    pub fn n_signals(&self) -> usize {
        self.params.n_qubits * self.v_nodes
    }

    /// Injects `u`, then evolves through `V` substeps, reading every `σ^z_j`
    /// after each. Signal `j·V + v` is observable `j` after substep `v + 1`.
    /// The stored state becomes `ρ(kτ)`.
    pub fn substep_evolve(&mut self, u: f64) -> Result<Vec<f64>> {
        self.frame.inject(&mut self.re, &mut self.im, u)?;
        let n = self.params.n_qubits;
        let v_nodes = self.v_nodes;
        let mut signals = vec![0.0; n * v_nodes];
        let mut s = vec![0.0; n];
        let mut scratch = Vec::new();
        for v in 0..v_nodes {
            self.frame
                .advance_measure(&mut self.re, &mut self.im, &mut s, &mut scratch);
            for (j, sj) in s.iter().enumerate() {
                signals[j * v_nodes + v] = *sj;
            }
        }
        self.frame.tidy(&mut self.re, &mut self.im);
        Ok(signals)
    }
}

/// Configuration of a higher-order reservoir and its readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HqrcConfig {
    pub n_qubits: usize,
    pub n_reservoirs: usize,
    pub coupling_j: f64,
    pub tau: f64,
    pub v_nodes: usize,
    pub alpha: f64,
    pub ridge_beta: f64,
    pub seed: u64,
    /// Every reservoir uses the same Ising draw. When false, reservoir `l`
    /// draws from `seed + l`.
    pub shared_hamiltonian: bool,
    pub execution: Execution,
}

impl Default for HqrcConfig {
    fn default() -> Self {
        Self {
            n_qubits: 6,
            n_reservoirs: 5,
            coupling_j: 2.0,
            tau: 4.0,
            v_nodes: 10,
            alpha: 0.5,
            ridge_beta: 1e-7,
            seed: 0,
            shared_hamiltonian: true,
            execution: Execution::Parallel,
        }
    }
}

impl HqrcConfig {
    pub fn n_total(&self) -> usize {
        self.n_reservoirs * self.n_qubits * self.v_nodes
    }

    /// Sweep label, e.g. `HQRC-V=10-alpha=0.5-beta=1e-07`. Structural
    /// parameters are appended when they differ from the defaults.
    pub fn label(&self) -> String {
        let mut s = format!(
            "HQRC-V={}-alpha={}-beta={}",
            self.v_nodes,
            fmt_param(self.alpha),
            fmt_param(self.ridge_beta)
        );
        let d = Self::default();
        if (self.n_qubits, self.n_reservoirs, self.coupling_j, self.tau)
            != (d.n_qubits, d.n_reservoirs, d.coupling_j, d.tau)
            || !self.shared_hamiltonian
        {
            s += &format!(
                "-N={}-NQRC={}-J={}-tau={}",
                self.n_qubits,
                self.n_reservoirs,
                fmt_param(self.coupling_j),
                fmt_param(self.tau)
            );
            if !self.shared_hamiltonian {
                s += "-distinct";
            }
        }
        s
    }
}

/// Block tiling: reservoir `l` receives input component `⌊l·N_in/N_qrc⌋`.
pub fn block_tiling(n_reservoirs: usize, n_in: usize) -> Result<Vec<usize>> {
    if n_in == 0 || n_reservoirs == 0 || !n_reservoirs.is_multiple_of(n_in) {
        return Err(domain(format!(
            "input dimension {n_in} must divide the reservoir count {n_reservoirs}"
        )));
    }
    Ok((0..n_reservoirs).map(|l| l * n_in / n_reservoirs).collect())
}

/// Serializable snapshot of an ensemble's dynamic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HqrcCheckpoint {
    pub z: Vec<f64>,
    /// Per reservoir, column-major `[re, im]` pairs of `Qᵀ ρ Q` in the
    /// Hamiltonian eigenbasis (stored as-is so a restore is bit-exact).
    pub states: Vec<Vec<[f64; 2]>>,
}

/// Ensemble of quantum reservoirs mixed through `W_con` with strength `α`.
#[derive(Debug, Clone)]
pub struct HigherOrderReservoir {
    reservoirs: Vec<QuantumReservoir>,
    w_con: DMatrix<f64>,
    alpha: f64,
    n_in: usize,
    tiling: Vec<usize>,
    z: Vec<f64>,
    exec: Execution,
}

impl HigherOrderReservoir {
    pub fn new(cfg: &HqrcConfig, n_in: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.alpha) {
            return Err(domain(format!(
                "connection strength {} outside [0, 1]",
                cfg.alpha
            )));
        }
        let tiling = block_tiling(cfg.n_reservoirs, n_in)?;
        let shared = IsingParams::random(cfg.n_qubits, cfg.coupling_j, cfg.seed)?;
        let base = QuantumReservoir::new(shared, cfg.tau, cfg.v_nodes)?;
        let reservoirs = (0..cfg.n_reservoirs)
            .map(|l| {
                if cfg.shared_hamiltonian {
                    Ok(base.clone())
                } else {
                    let p = IsingParams::random(
                        cfg.n_qubits,
                        cfg.coupling_j,
                        cfg.seed.wrapping_add(l as u64),
                    )?;
                    QuantumReservoir::new(p, cfg.tau, cfg.v_nodes)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n_total = cfg.n_total();
        let w_con = random_row_stochastic(cfg.n_reservoirs, n_total, cfg.seed);
        Self::from_parts(reservoirs, w_con, cfg.alpha, n_in, tiling, cfg.execution)
    }

    pub fn from_parts(
        reservoirs: Vec<QuantumReservoir>,
        w_con: DMatrix<f64>,
        alpha: f64,
        n_in: usize,
        tiling: Vec<usize>,
        exec: Execution,
    ) -> Result<Self> {
        let n_qrc = reservoirs.len();
        if n_qrc == 0 {
            return Err(domain("ensemble needs at least one reservoir"));
        }
        if tiling.len() != n_qrc || tiling.iter().any(|&t| t >= n_in) || !n_qrc.is_multiple_of(n_in)
        {
            return Err(domain(
                "tiling inconsistent with input and reservoir counts",
            ));
        }
        let n_total: usize = reservoirs.iter().map(|r| r.n_signals()).sum();
        if w_con.nrows() != n_qrc || w_con.ncols() != n_total {
            return Err(domain(format!(
                "W_con must be {n_qrc}x{n_total}, got {}x{}",
                w_con.nrows(),
                w_con.ncols()
            )));
        }
        for row in w_con.row_iter() {
            if row.iter().any(|v| *v < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(domain("rows of W_con must be non-negative and sum to 1"));
            }
        }
        Ok(Self {
            reservoirs,
            w_con,
            alpha,
            n_in,
            tiling,
            z: vec![0.0; n_total],
            exec,
        })
    }

    pub fn reservoirs(&self) -> &[QuantumReservoir] {
        &self.reservoirs
    }

    pub fn w_con(&self) -> &DMatrix<f64> {
        &self.w_con
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_reservoirs(&self) -> usize {
        self.reservoirs.len()
    }

    pub fn n_total(&self) -> usize {
        self.z.len()
    }

    pub fn tiling(&self) -> &[usize] {
        &self.tiling
    }

    /// Scaled readout state `z ∈ [0, 1]^{N_total}`.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    /// Every reservoir back to the maximally mixed state and `z = 0`.
    pub fn reset(&mut self) {
        for r in &mut self.reservoirs {
            let mixed = DensityMatrix::maximally_mixed(r.n_qubits()).expect("valid qubit count");
            r.set_state(mixed).expect("matching dimension");
        }
        self.z.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Resets with a caller-chosen initial density matrix for every reservoir.
    pub fn reset_with(&mut self, rho0: &DensityMatrix) -> Result<()> {
        for r in &mut self.reservoirs {
            r.set_state(rho0.clone())?;
        }
        self.z.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    fn feedback(&self) -> Vec<f64> {
        let z = &self.z;
        self.w_con
            .row_iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Open-loop mixed input `clip((1−α)·W_in·u + α·W_con·z)`.
    pub fn mix_input_open(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_in {
            return Err(domain(format!(
                "expected {} inputs, got {}",
                self.n_in,
                u.len()
            )));
        }
        let fb = self.feedback();
        let mixed: Vec<f64> = self
            .tiling
            .iter()
            .zip(&fb)
            .map(|(&c, f)| (1.0 - self.alpha) * u[c] + self.alpha * f)
            .collect();
        clip_unit(&mixed)
    }

    /// Closed-loop mixed input `clip((1−α)·W'_out·[1; z] + α·W_con·z)`.
    pub fn mix_input_closed(&self, weights: &ReadoutWeights) -> Result<Vec<f64>> {
        let rep = weights.replicated.as_ref().ok_or_else(|| {
            Error::State("closed-loop mixing needs replicated readout weights".into())
        })?;
        if rep.ncols() != self.n_reservoirs() {
            return Err(domain(
                "replicated weights do not match the reservoir count",
            ));
        }
        let out = linear_output(rep, &self.z)?;
        let fb = self.feedback();
        let mixed: Vec<f64> = out
            .iter()
            .zip(&fb)
            .map(|(o, f)| (1.0 - self.alpha) * o + self.alpha * f)
            .collect();
        clip_unit(&mixed)
    }

    /// Advances every reservoir with its mixed input and refreshes `z`.
    pub fn step(&mut self, u_mixed: &[f64]) -> Result<&[f64]> {
        if u_mixed.len() != self.n_reservoirs() {
            return Err(domain("one mixed input per reservoir is required"));
        }
        if let Some(bad) = u_mixed.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(domain(format!("mixed input {bad} outside [0, 1]")));
        }
        let signals = par::map_mut(self.exec, &mut self.reservoirs, |l, r| {
            r.substep_evolve(u_mixed[l])
        });
        let mut offset = 0;
        for s in signals {
            let s = s?;
            for (dst, v) in self.z[offset..offset + s.len()].iter_mut().zip(&s) {
                *dst = (v + 1.0) * 0.5;
            }
            offset += s.len();
        }
        Ok(&self.z)
    }

    /// One teacher-forced step with external input `u`.
    pub fn drive(&mut self, u: &[f64]) -> Result<&[f64]> {
        let mixed = self.mix_input_open(u)?;
        self.step(&mixed)
    }

    /// Runs `dl` open-loop steps on the leading inputs, discarding signals.
    pub fn washout(&mut self, inputs: &[Vec<f64>], dl: usize) -> Result<()> {
        if dl > inputs.len() {
            return Err(domain(format!(
                "washout of {dl} steps needs at least {dl} inputs, got {}",
                inputs.len()
            )));
        }
        for u in &inputs[..dl] {
            self.drive(u)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> HqrcCheckpoint {
        HqrcCheckpoint {
            z: self.z.clone(),
            states: self
                .reservoirs
                .iter()
                .map(|r| {
                    r.re.iter()
                        .zip(r.im.iter())
                        .map(|(a, b)| [*a, *b])
                        .collect()
                })
                .collect(),
        }
    }

    pub fn restore(&mut self, cp: &HqrcCheckpoint) -> Result<()> {
        if cp.z.len() != self.z.len() || cp.states.len() != self.reservoirs.len() {
            return Err(domain("checkpoint does not match the ensemble shape"));
        }
        for (r, s) in self.reservoirs.iter_mut().zip(&cp.states) {
            let d = r.frame.dim();
            if s.len() != d * d {
                return Err(domain("checkpoint state has the wrong dimension"));
            }
            let re = DMatrix::from_iterator(d, d, s.iter().map(|p| p[0]));
            let im = DMatrix::from_iterator(d, d, s.iter().map(|p| p[1]));
            r.set_frame_state(re, im)?;
        }
        self.z.copy_from_slice(&cp.z);
        Ok(())
    }
}

/// Uniform `[0, 1)` entries, each row normalized to sum 1.
pub fn random_row_stochastic(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = Stream::derived(seed, tag::W_CON);
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.uniform(0.0, 1.0);
        }
        let s: f64 = m.row(r).sum();
        if s > 0.0 {
            m.row_mut(r).unscale_mut(s);
        } else {
            m.row_mut(r).fill(1.0 / cols as f64);
        }
    }
    m
}
