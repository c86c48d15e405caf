//! Evaluation quantities. Grids are `T × N` (time rows, flattened cells as
//! columns); modal series are `T × M`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::pod::PodBasis;

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(domain(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(domain("cannot evaluate an empty series"));
    }
    Ok(())
}

/// Root of the mean squared error pooled over every timestep and selected
/// cell. `indices` selects columns; `None` means all.
pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>, indices: Option<&[usize]>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let mut sum = 0.0;
    let count = match indices {
        None => {
            sum = pred
                .iter()
                .zip(truth.iter())
                .map(|(p, t)| (p - t).powi(2))
                .sum();
            pred.len()
        }
        Some([]) => return Err(domain("empty cell selection")),
        Some(idx) => {
            if let Some(bad) = idx.iter().find(|i| **i >= pred.ncols()) {
                return Err(domain(format!("cell index {bad} out of range")));
            }
            for t in 0..pred.nrows() {
                for &i in idx {
                    sum += (pred[(t, i)] - truth[(t, i)]).powi(2);
                }
            }
            idx.len() * pred.nrows()
        }
    };
    Ok((sum / count as f64).sqrt())
}

/// `sqrt(mean_{t,j} (pred − truth)² / σ_j²)` with `σ_j²` the population
/// variance of `truth[:, j]` over the same window.
pub fn rmnse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let t = truth.nrows() as f64;
    let mut total = 0.0;
    for j in 0..truth.ncols() {
        let col = truth.column(j);
        let mean = col.sum() / t;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
        if !(var > 0.0) {
            return Err(domain(format!(
                "dimension {j} has zero variance over the evaluation window"
            )));
        }
        let se: f64 = pred
            .column(j)
            .iter()
            .zip(col.iter())
            .map(|(p, y)| (p - y).powi(2))
            .sum();
        total += se / var;
    }
    Ok((total / truth.len() as f64).sqrt())
}

/// RMSE between `truth` (`N × T` snapshots) and its projection onto the basis,
/// restricted to the snapshot columns in `window`.
pub fn reconstruction_floor(
    basis: &PodBasis,
    truth: &DMatrix<f64>,
    window: std::ops::Range<usize>,
    indices: Option<&[usize]>,
) -> Result<f64> {
    if window.is_empty() || window.end > truth.ncols() {
        return Err(domain("reconstruction window out of range"));
    }
    let slice = truth.columns(window.start, window.len()).into_owned();
    let rec = basis.reconstruct_series(&basis.project_series(&slice)?)?;
    rmse(&rec.transpose(), &slice.transpose(), indices)
}

/// Elementwise mean and population standard deviation across members.
pub fn ensemble_average(members: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = members
        .first()
        .ok_or_else(|| domain("ensemble has no members"))?;
    if members.iter().any(|m| m.shape() != first.shape()) {
        return Err(domain("ensemble members differ in shape"));
    }
    let k = members.len() as f64;
    let mut mean = DMatrix::zeros(first.nrows(), first.ncols());
    for m in members {
        mean += m;
    }
    mean /= k;
    let mut var = DMatrix::<f64>::zeros(first.nrows(), first.ncols());
    for m in members {
        var.zip_apply(&(m - &mean), |v, d| *v += d * d);
    }
    Ok((mean, var.map(|v| (v / k).sqrt())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub horizon: usize,
    pub rmse_grid: f64,
    pub rmse_region: f64,
    /// Undefined when a truth dimension is constant over the window.
    pub rmnse_modal: Option<f64>,
    pub recon_floor: f64,
}

pub const CSV_HEADER: &str = "label,horizon,rmse_grid,rmse_region,rmnse_modal,recon_floor";

impl MetricReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            csv_field(&self.label),
            self.horizon,
            self.rmse_grid,
            self.rmse_region,
            self.rmnse_modal.map(|v| v.to_string()).unwrap_or_default(),
            self.recon_floor
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.rmse_grid, self.rmse_region, self.recon_floor]
            .iter()
            .chain(self.rmnse_modal.as_ref())
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Header plus one row per report.
pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_trivial() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(rmse(&a, &a, None).unwrap(), 0.0);
        let b = a.add_scalar(-0.75);
        assert_abs_diff_eq!(rmse(&a, &b, None).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(rmse(&a, &b, Some(&[1, 3])).unwrap(), 0.75, epsilon = 1e-15);
        assert!(rmse(&a, &b, Some(&[])).is_err());
        assert!(rmse(&a, &b, Some(&[4])).is_err());
        assert!(rmse(&a, &DMatrix::zeros(4, 3), None).is_err());
    }

    #[test]
    fn rmnse_cases() {
        let truth = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, 3.0, 2.0, 5.0, 3.0, 7.0]);
        assert_eq!(rmnse(&truth, &truth).unwrap(), 0.0);
        let means = DMatrix::from_row_slice(4, 2, &[1.5, 4.0, 1.5, 4.0, 1.5, 4.0, 1.5, 4.0]);
        assert_abs_diff_eq!(rmnse(&means, &truth).unwrap(), 1.0, epsilon = 1e-15);

        // var = 1.25 and 5; errors 0.5 everywhere in column 0, 1 in column 1.
        let pred = truth.map_with_location(|_, j, v| v + if j == 0 { 0.5 } else { 1.0 });
        let expect = ((4.0 * 0.25 / 1.25 + 4.0 * 1.0 / 5.0) / 8.0f64).sqrt();
        assert_abs_diff_eq!(rmnse(&pred, &truth).unwrap(), expect, epsilon = 1e-15);

        let flat = DMatrix::from_row_slice(2, 1, &[3.0, 3.0]);
        assert!(rmnse(&flat, &flat).is_err());
    }

    #[test]
    fn ensemble_cases() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let (mean, std) = ensemble_average(std::slice::from_ref(&m)).unwrap();
        assert_eq!(mean, m);
        assert!(std.iter().all(|s| *s == 0.0));

        let (mean, std) = ensemble_average(&[m.add_scalar(0.3), m.add_scalar(-0.3)]).unwrap();
        assert!((mean - &m).amax() < 1e-15);
        assert!(std.iter().all(|s| (s - 0.3).abs() < 1e-15));

        assert!(ensemble_average(&[]).is_err());
        assert!(ensemble_average(&[m.clone(), DMatrix::zeros(2, 2)]).is_err());
    }

    #[test]
    fn floor_is_zero_in_span() {
        let data = DMatrix::from_fn(6, 5, |i, t| {
            (i as f64 + 1.0) * (t as f64 * 0.7).sin() + i as f64
        });
        let (basis, _) = crate::pod::fit_pod(&data, 1).unwrap();
        assert!(reconstruction_floor(&basis, &data, 0..5, None).unwrap() < 1e-10);
        assert!(reconstruction_floor(&basis, &data, 3..7, None).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            label: "a,b".into(),
            horizon: 300,
            rmse_grid: 0.5,
            rmse_region: 0.25,
            rmnse_modal: Some(1.0),
            recon_floor: 0.125,
        };
        assert!(r.is_valid());
        assert_eq!(
            reports_csv(&[r]),
            format!("{CSV_HEADER}\n\"a,b\",300,0.5,0.25,1,0.125\n")
        );
    }
}
