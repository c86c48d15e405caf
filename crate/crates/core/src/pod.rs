//! Proper orthogonal decomposition of snapshot series.
//!
//! Modes are computed by the method of snapshots: the `T×T` eigenproblem of
//! `SᵀS` is solved and mapped back to space with `v = S u / √λ`, which yields
//! the leading eigenvectors of `SSᵀ` without forming an `N×N` matrix.

use nalgebra::{DMatrix, DVector};

use crate::binio::{Reader, Writer};
use crate::error::{domain, parse_err, Error, Result};

/// Per-mode min-max scaler onto `[0, 1]`, fitted on training coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Column extrema of a `T×M` coefficient matrix.
    pub fn fit(coeffs: &DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 {
            return Err(domain("cannot fit a scaler on an empty series"));
        }
        let min = coeffs.column_iter().map(|c| c.min()).collect();
        let max = coeffs.column_iter().map(|c| c.max()).collect();
        Ok(Self { min, max })
    }

    pub fn is_fitted(&self) -> bool {
        !self.min.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    fn check(&self, m: usize) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::State("scaler has not been fitted".into()));
        }
        if m != self.dims() {
            return Err(domain(format!("scaler has {} modes, got {m}", self.dims())));
        }
        Ok(())
    }

    /// `(a − min)/(max − min)`; a degenerate mode maps to 0.5. Values outside
    /// the training extrema leave `[0, 1]` and are not clipped.
    pub fn scale_row(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.check(a.len())?;
        Ok(a.iter()
            .enumerate()
            .map(|(j, v)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    (v - self.min[j]) / span
                } else {
                    0.5
                }
            })
            .collect())
    }

    pub fn unscale_row(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check(s.len())?;
        Ok(s.iter()
            .enumerate()
            .map(|(j, v)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    self.min[j] + v * span
                } else {
                    self.min[j]
                }
            })
            .collect())
    }

    pub fn scale(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        map_rows(coeffs, |r| self.scale_row(r))
    }

    pub fn unscale(&self, scaled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        map_rows(scaled, |r| self.unscale_row(r))
    }
}

fn map_rows(m: &DMatrix<f64>, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, row) in m.row_iter().enumerate() {
        let r: Vec<f64> = row.iter().copied().collect();
        for (j, v) in f(&r)?.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Mean snapshot, `M` orthonormal spatial modes and the training scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub mean: DVector<f64>,
    /// `N×M`, columns are modes.
    pub modes: DMatrix<f64>,
    /// Eigenvalues of `SSᵀ` for the kept modes, descending.
    pub eigenvalues: Vec<f64>,
    /// Full descending spectrum of `SSᵀ` (`min(N, T)` values).
    pub spectrum: Vec<f64>,
    pub scaler: MinMaxScaler,
}

/// Modal coefficients `a_j(t)` as a `T×M` matrix, with the training scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSeries {
    pub coeffs: DMatrix<f64>,
    pub scaler: MinMaxScaler,
}

impl ModalSeries {
    pub fn scaled(&self) -> Result<DMatrix<f64>> {
        self.scaler.scale(&self.coeffs)
    }
}

/// Fits a basis of `n_modes` modes to `data` (`N×T`, columns are snapshots).
/// The returned scaler is fitted on the projected coefficients of `data`.
pub fn fit_pod(data: &DMatrix<f64>, n_modes: usize) -> Result<(PodBasis, ModalSeries)> {
    let (n, t) = data.shape();
    if n_modes == 0 || n_modes > n.min(t) {
        return Err(domain(format!(
            "cannot keep {n_modes} modes from {n} points and {t} snapshots"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(domain("snapshot data contains non-finite values"));
    }
    let mean = data.column_mean();
    let mut s = data.clone();
    for mut col in s.column_iter_mut() {
        col -= &mean;
    }

    let gram = s.tr_mul(&s);
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order
        .iter()
        .take(n.min(t))
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();

    let lead = spectrum.first().copied().unwrap_or(0.0);
    let cutoff = lead * (t as f64) * f64::EPSILON * 16.0;
    let mut modes = DMatrix::zeros(n, n_modes);
    let mut filled = 0;
    for &i in order.iter().take(n_modes) {
        let lambda = eig.eigenvalues[i];
        if lambda <= cutoff || lambda <= 0.0 {
            break;
        }
        let v = &s * eig.eigenvectors.column(i) / lambda.sqrt();
        modes.set_column(filled, &v);
        filled += 1;
    }
    complete_orthonormal(&mut modes, filled);
    for mut col in modes.column_iter_mut() {
        let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |acc, (k, v)| {
            if v.abs() > acc.1 {
                (k, v.abs())
            } else {
                acc
            }
        });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }

    let coeffs = (modes.tr_mul(&s)).transpose();
    let scaler = MinMaxScaler::fit(&coeffs)?;
    let eigenvalues = spectrum[..n_modes].to_vec();
    let basis = PodBasis {
        mean,
        modes,
        eigenvalues,
        spectrum,
        scaler: scaler.clone(),
    };
    Ok((basis, ModalSeries { coeffs, scaler }))
}

/// Re-orthonormalizes the first `filled` columns (two Gram-Schmidt passes) and
/// fills the rest with unit vectors orthogonal to them.
fn complete_orthonormal(modes: &mut DMatrix<f64>, filled: usize) {
    let (n, m) = modes.shape();
    let mut col = 0;
    let mut candidate = 0;
    while col < m {
        if col >= filled {
            if candidate >= n {
                break;
            }
            let mut e = DVector::zeros(n);
            e[candidate] = 1.0;
            modes.set_column(col, &e);
            candidate += 1;
        }
        let mut v = modes.column(col).into_owned();
        for _ in 0..2 {
            for k in 0..col {
                let qk = modes.column(k);
                let proj = qk.dot(&v);
                v.axpy(-proj, &qk, 1.0);
            }
        }
        let norm = v.norm();
        if col >= filled && norm < 1e-8 {
            continue;
        }
        modes.set_column(col, &(v / norm));
        col += 1;
    }
}

impl PodBasis {
    pub fn n_points(&self) -> usize {
        self.modes.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    /// `a = Vᵀ(d − mean)`.
    pub fn project(&self, snapshot: &[f64]) -> Result<Vec<f64>> {
        if snapshot.len() != self.n_points() {
            return Err(domain(format!(
                "snapshot has {} points, basis has {}",
                snapshot.len(),
                self.n_points()
            )));
        }
        let d = DVector::from_iterator(
            snapshot.len(),
            snapshot.iter().zip(self.mean.iter()).map(|(a, b)| a - b),
        );
        Ok(self.modes.tr_mul(&d).iter().copied().collect())
    }

    /// `mean + Σ a_j v_j`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_modes() {
            return Err(domain(format!(
                "{} coefficients for {} modes",
                coeffs.len(),
                self.n_modes()
            )));
        }
        let a = DVector::from_column_slice(coeffs);
        Ok((&self.mean + &self.modes * a).iter().copied().collect())
    }

    /// Projects every column of an `N×T` snapshot matrix; returns `T×M`.
    pub fn project_series(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.nrows() != self.n_points() {
            return Err(domain("snapshot matrix does not match the basis"));
        }
        let mut s = data.clone();
        for mut col in s.column_iter_mut() {
            col -= &self.mean;
        }
        Ok(self.modes.tr_mul(&s).transpose())
    }

    /// Reconstructs a `T×M` coefficient series as an `N×T` snapshot matrix.
    pub fn reconstruct_series(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coeffs.ncols() != self.n_modes() {
            return Err(domain("coefficient series does not match the basis"));
        }
        let mut out = &self.modes * coeffs.transpose();
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        Ok(out)
    }

    /// Keeps the leading `m` modes.
    pub fn truncate(&self, m: usize) -> Result<PodBasis> {
        if m == 0 || m > self.n_modes() {
            return Err(domain(format!(
                "cannot truncate {} modes to {m}",
                self.n_modes()
            )));
        }
        let scaler = if self.scaler.is_fitted() {
            MinMaxScaler {
                min: self.scaler.min[..m].to_vec(),
                max: self.scaler.max[..m].to_vec(),
            }
        } else {
            MinMaxScaler::default()
        };
        Ok(PodBasis {
            mean: self.mean.clone(),
            modes: self.modes.columns(0, m).into_owned(),
            eigenvalues: self.eigenvalues[..m].to_vec(),
            spectrum: self.spectrum.clone(),
            scaler,
        })
    }

    /// Container layout, all little-endian:
    ///
    /// ```text
    /// magic "POD1" | u32 version=1 | u64 n_points | u64 n_modes | u64 spectrum_len
    /// | mean (n_points f64) | modes (n_points*n_modes f64, row-major)
    /// | eigenvalues (n_modes f64) | scaler_min (n_modes f64) | scaler_max (n_modes f64)
    /// | spectrum (spectrum_len f64)
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.scaler.is_fitted() {
            return Err(Error::State(
                "cannot serialize a basis without a fitted scaler".into(),
            ));
        }
        let mut w = Writer::default();
        w.bytes(b"POD1");
        w.u32(1);
        w.u64(self.n_points() as u64);
        w.u64(self.n_modes() as u64);
        w.u64(self.spectrum.len() as u64);
        w.f64s(self.mean.iter());
        for row in self.modes.row_iter() {
            w.f64s(row.iter());
        }
        w.f64s(&self.eigenvalues);
        w.f64s(&self.scaler.min);
        w.f64s(&self.scaler.max);
        w.f64s(&self.spectrum);
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(b"POD1", "POD basis")?;
        let at = r.pos;
        let version = r.u32("version")?;
        if version != 1 {
            return Err(parse_err(
                at,
                format!("unsupported POD basis version {version}"),
            ));
        }
        let n = r.usize("n_points")?;
        let m = r.usize("n_modes")?;
        let ns = r.usize("spectrum_len")?;
        let mean = DVector::from_vec(r.f64s(n, "mean")?);
        let nm = n
            .checked_mul(m)
            .ok_or_else(|| parse_err(r.pos, "modes size overflows"))?;
        let modes = DMatrix::from_row_slice(n, m, &r.f64s(nm, "modes")?);
        let eigenvalues = r.f64s(m, "eigenvalues")?;
        let min = r.f64s(m, "scaler_min")?;
        let max = r.f64s(m, "scaler_max")?;
        let spectrum = r.f64s(ns, "spectrum")?;
        r.finish("POD basis")?;
        Ok(Self {
            mean,
            modes,
            eigenvalues,
            spectrum,
            scaler: MinMaxScaler { min, max },
        })
    }
}

/// `‖S − V Vᵀ S‖²_F` for the mean-subtracted columns of `data` under `basis`.
pub fn projection_residual(basis: &PodBasis, data: &DMatrix<f64>) -> Result<f64> {
    let coeffs = basis.project_series(data)?;
    let rec = basis.reconstruct_series(&coeffs)?;
    Ok((data - rec).norm_squared())
}
