//! Linear readout: ridge training, closed-loop replication, prediction.

use nalgebra::DMatrix;

use crate::binio::{Reader, Writer};
use crate::error::{domain, parse_err, Error, Result};

/// Design matrix with a leading constant bias column, plus regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    x: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl TrainingMatrix {
    /// Builds `X = [1 | features]` from per-step feature rows.
    pub fn from_rows(features: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(domain(format!(
                "{} feature rows but {} target rows",
                features.len(),
                targets.len()
            )));
        }
        let Some(first) = features.first() else {
            return Err(domain("training matrix has no rows"));
        };
        let (nf, nt) = (first.len(), targets[0].len());
        if features.iter().any(|r| r.len() != nf) || targets.iter().any(|r| r.len() != nt) {
            return Err(domain("ragged training rows"));
        }
        let k = features.len();
        let x = DMatrix::from_fn(
            k,
            nf + 1,
            |r, c| if c == 0 { 1.0 } else { features[r][c - 1] },
        );
        let targets = DMatrix::from_fn(k, nt, |r, c| targets[r][c]);
        Self::new(x, targets)
    }

    /// `x` must already carry the bias column.
    pub fn new(x: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != targets.nrows() {
            return Err(domain("design matrix and targets disagree on row count"));
        }
        if x.ncols() == 0 || x.column(0).iter().any(|v| *v != 1.0) {
            return Err(domain(
                "first design-matrix column must be the constant 1.0",
            ));
        }
        Ok(Self { x, targets })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Trained readout. `w` maps `[1; features]` to outputs, shape `(F+1) × N_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutWeights {
    pub w: DMatrix<f64>,
    pub beta: f64,
    /// Column `l` copies the column of the input component tiled to reservoir `l`.
    pub replicated: Option<DMatrix<f64>>,
}

impl ReadoutWeights {
    pub fn n_features(&self) -> usize {
        self.w.nrows() - 1
    }

    pub fn n_outputs(&self) -> usize {
        self.w.ncols()
    }

    /// Flat little-endian layout:
    ///
    /// ```text
    /// magic "HQRW" | u32 version=1 | u64 rows | u64 cols | f64 beta | u64 replicated_cols
    /// | rows*cols f64 (row-major w) | rows*replicated_cols f64 (row-major replicated)
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer::default();
        out.bytes(b"HQRW");
        out.u32(1);
        out.u64(self.w.nrows() as u64);
        out.u64(self.w.ncols() as u64);
        out.f64(self.beta);
        let rep_cols = self.replicated.as_ref().map_or(0, |r| r.ncols());
        out.u64(rep_cols as u64);
        write_row_major(&mut out, &self.w);
        if let Some(r) = &self.replicated {
            write_row_major(&mut out, r);
        }
        out.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(b"HQRW", "readout weights")?;
        let at = r.pos;
        let version = r.u32("version")?;
        if version != 1 {
            return Err(parse_err(
                at,
                format!("unsupported readout version {version}"),
            ));
        }
        let rows = r.usize("rows")?;
        let cols = r.usize("cols")?;
        let beta = r.f64("beta")?;
        let rep_cols = r.usize("replicated_cols")?;
        let w = read_row_major(&mut r, rows, cols, "weights")?;
        let replicated = if rep_cols > 0 {
            Some(read_row_major(
                &mut r,
                rows,
                rep_cols,
                "replicated weights",
            )?)
        } else {
            None
        };
        r.finish("readout weights")?;
        Ok(Self {
            w,
            beta,
            replicated,
        })
    }
}

fn write_row_major(out: &mut Writer, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        out.f64s(row.iter());
    }
}

fn read_row_major(r: &mut Reader, rows: usize, cols: usize, field: &str) -> Result<DMatrix<f64>> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| parse_err(r.pos, format!("{field} size overflows")))?;
    let vals = r.f64s(n, field)?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// Ridge solution of `(XᵀX + βI) w = Xᵀŷ`. The bias weight is penalized like
/// every other weight. One Cholesky factorization serves all target columns.
pub fn ridge_fit(data: &TrainingMatrix, beta: f64) -> Result<ReadoutWeights> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(domain(format!(
            "ridge parameter must be finite and >= 0, got {beta}"
        )));
    }
    if data
        .x
        .iter()
        .chain(data.targets.iter())
        .any(|v| !v.is_finite())
    {
        return Err(domain("training data contains non-finite values"));
    }
    let x = &data.x;
    let mut gram = x.tr_mul(x);
    for i in 0..gram.nrows() {
        gram[(i, i)] += beta;
    }
    let rhs = x.tr_mul(&data.targets);

    let singular = || {
        Error::Numeric("normal equations are singular; use a ridge parameter beta > 0".to_string())
    };
    type Solver = Box<dyn Fn(&DMatrix<f64>) -> Option<DMatrix<f64>>>;
    let solve: Solver = match gram.clone().cholesky() {
        Some(ch) => {
            // Unregularized Gram matrices that are singular up to round-off
            // still factor; reject those by the spread of the factor's pivots.
            let diag = ch.l_dirty().diagonal();
            let (lo, hi) = (diag.min(), diag.max());
            if beta == 0.0 && !(lo > hi * 1e-7) {
                return Err(singular());
            }
            Box::new(move |b| Some(ch.solve(b)))
        }
        None if beta == 0.0 => return Err(singular()),
        None => {
            // Positive definite in exact arithmetic; round-off defeated Cholesky.
            let lu = gram.clone().full_piv_lu();
            Box::new(move |b| lu.solve(b))
        }
    };

    let mut w = solve(&rhs).ok_or_else(singular)?;
    let rhs_norm = rhs.norm();
    for _ in 0..3 {
        let resid = &rhs - &gram * &w;
        if resid.norm() <= 1e-12 * rhs_norm {
            break;
        }
        match solve(&resid) {
            Some(dw) => w += dw,
            None => break,
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    if beta == 0.0 {
        let resid = (&rhs - &gram * &w).norm();
        if resid > 1e-8 * rhs_norm.max(f64::MIN_POSITIVE) {
            return Err(singular());
        }
    }
    Ok(ReadoutWeights {
        w,
        beta,
        replicated: None,
    })
}

/// Componentwise clip to `[0, 1]`. NaN is an error, never clipped.
pub fn clip_unit(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .map(|&v| {
            if v.is_nan() {
                Err(domain("cannot clip NaN"))
            } else {
                Ok(v.clamp(0.0, 1.0))
            }
        })
        .collect()
}

/// `wᵀ [1; features]` without clipping.
pub fn linear_output(w: &DMatrix<f64>, features: &[f64]) -> Result<Vec<f64>> {
    if w.nrows() != features.len() + 1 {
        return Err(domain(format!(
            "readout expects {} features, got {}",
            w.nrows() - 1,
            features.len()
        )));
    }
    Ok(w.column_iter()
        .map(|col| {
            col[0]
                + col
                    .rows(1, features.len())
                    .iter()
                    .zip(features)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect())
}

/// Prediction `clip(wᵀ [1; z])`.
pub fn predict(weights: &ReadoutWeights, features: &[f64]) -> Result<Vec<f64>> {
    clip_unit(&linear_output(&weights.w, features)?)
}

/// Copies the trained output column of `tiling[l]` into column `l`.
pub fn replicate_weights(weights: &ReadoutWeights, tiling: &[usize]) -> Result<ReadoutWeights> {
    let n_in = weights.n_outputs();
    let n_qrc = tiling.len();
    if n_qrc == 0 || !n_qrc.is_multiple_of(n_in) {
        return Err(domain(format!(
            "{n_qrc} reservoirs is not a positive multiple of {n_in} inputs"
        )));
    }
    if let Some(bad) = tiling.iter().find(|&&c| c >= n_in) {
        return Err(domain(format!(
            "tiling names input component {bad} of {n_in}"
        )));
    }
    let per = n_qrc / n_in;
    for c in 0..n_in {
        let count = tiling.iter().filter(|&&t| t == c).count();
        if count != per {
            return Err(domain(format!(
                "input component {c} feeds {count} reservoirs, expected {per}"
            )));
        }
    }
    let rows = weights.w.nrows();
    let replicated = DMatrix::from_fn(rows, n_qrc, |r, l| weights.w[(r, tiling[l])]);
    Ok(ReadoutWeights {
        replicated: Some(replicated),
        ..weights.clone()
    })
}
