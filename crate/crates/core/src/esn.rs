//! Echo state network baseline: `h ← tanh(W·h + W_in·u)` with a sparse
//! recurrent matrix rescaled to a target spectral radius.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{tag, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsnConfig {
    pub units: usize,
    /// Expected non-zeros per row of the recurrent matrix.
    pub degree: usize,
    pub radius: f64,
    pub input_scale: f64,
    pub ridge_beta: f64,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self {
            units: 60,
            degree: 10,
            radius: 0.9,
            input_scale: 1.0,
            ridge_beta: 1e-5,
            seed: 0,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(domain("ESN needs at least one unit"));
        }
        if self.degree == 0 || self.degree > self.units {
            return Err(domain(format!(
                "degree must be in 1..={}, got {}",
                self.units, self.degree
            )));
        }
        if !(self.radius > 0.0 && self.radius <= 1.0) {
            return Err(domain(format!(
                "radius must be in (0, 1], got {}",
                self.radius
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale >= 0.0) {
            return Err(domain("input_scale must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut s = format!(
            "ESN-units={}-beta={}",
            self.units,
            crate::fmt_param(self.ridge_beta)
        );
        let d = Self::default();
        if (self.degree, self.radius, self.input_scale) != (d.degree, d.radius, d.input_scale) {
            s += &format!(
                "-degree={}-radius={}-scale={}",
                self.degree,
                crate::fmt_param(self.radius),
                crate::fmt_param(self.input_scale)
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct EsnState {
    pub h: DVector<f64>,
    pub w_rec: CsrMatrix<f64>,
    /// `units × n_in`.
    pub w_in: DMatrix<f64>,
}

/// Largest eigenvalue modulus of a dense matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn esn_init(cfg: &EsnConfig, n_in: usize) -> Result<EsnState> {
    cfg.validate()?;
    if n_in == 0 {
        return Err(domain("ESN needs at least one input"));
    }
    let n = cfg.units;
    let p = cfg.degree as f64 / n as f64;
    let mut rng = Stream::derived(cfg.seed, tag::ESN_RECURRENT);
    // A draw with zero spectral radius (all-zero or nilpotent) is redrawn
    // from the same, now advanced, stream.
    let (entries, rho) = loop {
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if rng.bernoulli(p) {
                    entries.push((i, j, rng.uniform(-1.0, 1.0)));
                }
            }
        }
        let mut dense = DMatrix::zeros(n, n);
        for &(i, j, v) in &entries {
            dense[(i, j)] = v;
        }
        let rho = spectral_radius(&dense);
        if rho > 1e-12 {
            break (entries, rho);
        }
    };
    let scale = cfg.radius / rho;
    let mut coo = CooMatrix::new(n, n);
    for (i, j, v) in entries {
        coo.push(i, j, v * scale);
    }
    let mut rng = Stream::derived(cfg.seed, tag::ESN_INPUT);
    let w_in = DMatrix::from_row_iterator(
        n,
        n_in,
        (0..n * n_in).map(|_| rng.uniform(-cfg.input_scale, cfg.input_scale)),
    );
    Ok(EsnState {
        h: DVector::zeros(n),
        w_rec: CsrMatrix::from(&coo),
        w_in,
    })
}

impl EsnState {
    pub fn units(&self) -> usize {
        self.h.len()
    }

    pub fn n_in(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn reset(&mut self) {
        self.h.fill(0.0);
    }

    pub fn set_state(&mut self, h: &[f64]) -> Result<()> {
        if h.len() != self.units() {
            return Err(domain("ESN state has the wrong length"));
        }
        self.h.copy_from_slice(h);
        Ok(())
    }

    pub fn w_rec_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.units(), self.units());
        for (i, j, v) in self.w_rec.triplet_iter() {
            d[(i, j)] = *v;
        }
        d
    }
}

pub fn esn_step(state: &mut EsnState, u: &[f64]) -> Result<()> {
    if u.len() != state.n_in() {
        return Err(domain(format!(
            "expected {} inputs, got {}",
            state.n_in(),
            u.len()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite ESN input".into()));
    }
    let mut pre = &state.w_in * DVector::from_column_slice(u);
    for (i, row) in state.w_rec.row_iter().enumerate() {
        pre[i] += row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(j, w)| w * state.h[*j])
            .sum::<f64>();
    }
    state.h = pre.map(f64::tanh);
    Ok(())
}
