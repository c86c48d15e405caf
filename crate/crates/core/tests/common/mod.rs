//! Reference computations shared by the oracle and acceptance targets.
#![allow(dead_code)]

use hqrc::nalgebra::{Complex, DMatrix};
use hqrc::quantum::DensityMatrix;
use hqrc::rng::Stream;

pub type C = Complex<f64>;

pub fn c(re: f64) -> C {
    C::new(re, 0.0)
}

pub fn kron_ref(a: &DMatrix<C>, b: &DMatrix<C>) -> DMatrix<C> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn x() -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn z() -> DMatrix<C> {
    DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

/// `op` on `site`, identity elsewhere; site 0 is the leftmost factor.
pub fn on_site(n: usize, site: usize, op: &DMatrix<C>) -> DMatrix<C> {
    let mut out = DMatrix::from_element(1, 1, c(1.0));
    for k in 0..n {
        let f = if k == site {
            op.clone()
        } else {
            DMatrix::identity(2, 2)
        };
        out = kron_ref(&out, &f);
    }
    out
}

pub fn max_diff(a: &DMatrix<C>, b: &DMatrix<C>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

pub fn random_density(n: usize, rng: &mut Stream) -> DensityMatrix {
    let d = 1 << n;
    let g = DMatrix::from_fn(d, d, |_, _| C::new(rng.normal(), rng.normal()));
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::from_matrix(m / tr).unwrap()
}

/// `exp(A)` by scaling, a 30-term Taylor series and repeated squaring.
pub fn expm_taylor(a: &DMatrix<C>) -> DMatrix<C> {
    let norm: f64 = a.iter().map(|v| v.norm()).sum();
    let mut s = 0;
    while norm / f64::powi(2.0, s) > 0.5 {
        s += 1;
    }
    let scaled = a / c(f64::powi(2.0, s));
    let d = a.nrows();
    let mut term = DMatrix::<C>::identity(d, d);
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * &scaled / c(k as f64);
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `Tr_1` through the explicit index split `(a, b)` with `a` the first qubit.
pub fn partial_trace_ref(rho: &DMatrix<C>) -> DMatrix<C> {
    let half = rho.nrows() / 2;
    let mut out = DMatrix::zeros(half, half);
    for b in 0..half {
        for bp in 0..half {
            for a in 0..2 {
                out[(b, bp)] += rho[(a * half + b, a * half + bp)];
            }
        }
    }
    out
}

/// Gaussian elimination with partial pivoting on `A W = B`.
pub fn solve_ref(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot = a[col].clone();
            for (x, p) in a[row][col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            let pivot_row = b[col].clone();
            for (x, p) in b[row].iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
        }
    }
    let m = b[0].len();
    let mut w = vec![vec![0.0; m]; n];
    for row in (0..n).rev() {
        for k in 0..m {
            let s: f64 = (row + 1..n).map(|j| a[row][j] * w[j][k]).sum();
            w[row][k] = (b[row][k] - s) / a[row][row];
        }
    }
    w
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-26 * a.norm_squared() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = cs * akp - sn * akq;
                    a[(k, q)] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = cs * apk - sn * aqk;
                    a[(q, k)] = sn * apk + cs * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Dominant eigenvalue modulus by subspace iteration with a two-column block
/// (captures a complex-conjugate dominant pair), from the 2×2 Rayleigh quotient.
pub fn spectral_radius_ref(w: &DMatrix<f64>, iters: usize) -> f64 {
    let n = w.nrows();
    let mut rng = Stream::new(1234);
    let mut q = DMatrix::from_fn(n, 2, |_, _| rng.normal());
    let orth = |m: &mut DMatrix<f64>| {
        let a = m.column(0).normalize();
        let mut b = m.column(1) - &a * a.dot(&m.column(1));
        b /= b.norm();
        m.set_column(0, &a);
        m.set_column(1, &b);
    };
    orth(&mut q);
    for _ in 0..iters {
        q = w * &q;
        orth(&mut q);
    }
    let r = q.transpose() * w * &q;
    let (tr, det) = (
        r[(0, 0)] + r[(1, 1)],
        r[(0, 0)] * r[(1, 1)] - r[(0, 1)] * r[(1, 0)],
    );
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
    } else {
        det.abs().sqrt()
    }
}
