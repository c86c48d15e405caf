//! Dense density-matrix primitives for small spin systems.
//!
//! Qubit 0 is the leftmost Kronecker factor, i.e. the most significant bit of
//! a computational-basis index. It is the qubit that receives the input.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{tag, Stream};

pub type CMatrix = DMatrix<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Largest supported register; a 2^12 dense density matrix is already 256 MiB.
pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// The 2x2 Pauli matrix for `axis`.
pub fn pauli(axis: Axis) -> CMatrix {
    let i = Complex64::new(0.0, 1.0);
    match axis {
        Axis::X => CMatrix::from_row_slice(2, 2, &[C0, C1, C1, C0]),
        Axis::Y => CMatrix::from_row_slice(2, 2, &[C0, -i, i, C0]),
        Axis::Z => CMatrix::from_row_slice(2, 2, &[C1, C0, C0, -C1]),
    }
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `I ⊗ … ⊗ σ^axis ⊗ … ⊗ I` with the Pauli factor at position `site` (0-based).
pub fn embed_pauli(n_qubits: usize, site: usize, axis: Axis) -> Result<CMatrix> {
    check_qubits(n_qubits)?;
    if site >= n_qubits {
        return Err(domain(format!(
            "site {site} out of range for {n_qubits} qubits"
        )));
    }
    let id = CMatrix::identity(2, 2);
    let p = pauli(axis);
    let mut out = CMatrix::from_element(1, 1, C1);
    for q in 0..n_qubits {
        out = kron(&out, if q == site { &p } else { &id });
    }
    Ok(out)
}

fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return Err(domain(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
    }
    Ok(())
}

#[inline]
fn bit_of(n_qubits: usize, site: usize) -> usize {
    1 << (n_qubits - 1 - site)
}

/// A density matrix over `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    rho: CMatrix,
}

impl DensityMatrix {
    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let d = 1usize << n_qubits;
        Ok(Self {
            n_qubits,
            rho: CMatrix::identity(d, d) / Complex64::new(d as f64, 0.0),
        })
    }

    /// The pure computational-basis state `|index⟩⟨index|`.
    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let d = 1usize << n_qubits;
        if index >= d {
            return Err(domain(format!("basis index {index} out of range")));
        }
        let mut rho = CMatrix::zeros(d, d);
        rho[(index, index)] = C1;
        Ok(Self { n_qubits, rho })
    }

    /// Wraps a matrix whose dimension is a power of two. No physicality check;
    /// see [`DensityMatrix::validate`].
    pub fn from_matrix(rho: CMatrix) -> Result<Self> {
        let d = rho.nrows();
        if d != rho.ncols() || d < 2 || !d.is_power_of_two() {
            return Err(domain(format!(
                "density matrix must be square with power-of-two dimension, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let n_qubits = d.trailing_zeros() as usize;
        check_qubits(n_qubits)?;
        Ok(Self { n_qubits, rho })
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<Self> {
        Self::from_matrix(kron(&self.rho, &other.rho))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    /// `max |ρ_ij − conj(ρ_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.rho[(i, j)] - self.rho[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = hermitian_part(&self.rho);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the Hermitian, unit-trace and positive-semidefinite invariants.
    pub fn validate(&self, herm_tol: f64, trace_tol: f64, psd_tol: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > herm_tol {
            return Err(Error::Numeric(format!("hermiticity error {herm:e}")));
        }
        let tr = self.trace();
        if (tr - C1).norm() > trace_tol {
            return Err(Error::Numeric(format!("trace {tr} deviates from 1")));
        }
        let min = self.min_eigenvalue();
        if min < -psd_tol {
            return Err(Error::Numeric(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Divides by the real part of the trace, correcting round-off drift.
    pub fn renormalize(&mut self) {
        let tr = self.rho.trace().re;
        if tr != 0.0 && tr.is_finite() {
            self.rho.unscale_mut(tr);
        }
    }
}

fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Parameters of the fully connected transverse-field Ising model
/// `H = J Σ_{i≠j} h_ij X_i X_j + J Σ_j g_j Z_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub n_qubits: usize,
    pub coupling_j: f64,
    /// Symmetric, zero diagonal, entries in `[-1, 1]`. Row-major `n×n`.
    pub couplings_h: Vec<f64>,
    pub fields_g: Vec<f64>,
    pub rng_seed: u64,
}

impl IsingParams {
    /// Draws `h_ij` (upper triangle, row-major, mirrored) and then `g_j`, all
    /// uniform on `[-1, 1)`, from the Ising stream of `seed`.
    pub fn random(n_qubits: usize, coupling_j: f64, seed: u64) -> Result<Self> {
        check_qubits(n_qubits)?;
        let mut rng = Stream::derived(seed, tag::ISING);
        let mut h = vec![0.0; n_qubits * n_qubits];
        for i in 0..n_qubits {
            for j in (i + 1)..n_qubits {
                let v = rng.uniform(-1.0, 1.0);
                h[i * n_qubits + j] = v;
                h[j * n_qubits + i] = v;
            }
        }
        let g = (0..n_qubits).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self::new(n_qubits, coupling_j, h, g, seed)
    }

    pub fn new(
        n_qubits: usize,
        coupling_j: f64,
        couplings_h: Vec<f64>,
        fields_g: Vec<f64>,
        rng_seed: u64,
    ) -> Result<Self> {
        check_qubits(n_qubits)?;
        if couplings_h.len() != n_qubits * n_qubits || fields_g.len() != n_qubits {
            return Err(domain("Ising parameter dimensions do not match n_qubits"));
        }
        if !coupling_j.is_finite() {
            return Err(domain("coupling J must be finite"));
        }
        for i in 0..n_qubits {
            if couplings_h[i * n_qubits + i] != 0.0 {
                return Err(domain("h must have a zero diagonal"));
            }
            for j in 0..n_qubits {
                let v = couplings_h[i * n_qubits + j];
                if !(-1.0..=1.0).contains(&v) {
                    return Err(domain(format!("h[{i}][{j}] = {v} outside [-1, 1]")));
                }
                if v != couplings_h[j * n_qubits + i] {
                    return Err(domain("h must be symmetric"));
                }
            }
        }
        if let Some(g) = fields_g.iter().find(|g| !(-1.0..=1.0).contains(*g)) {
            return Err(domain(format!("field {g} outside [-1, 1]")));
        }
        Ok(Self {
            n_qubits,
            coupling_j,
            couplings_h,
            fields_g,
            rng_seed,
        })
    }

    pub fn h(&self, i: usize, j: usize) -> f64 {
        self.couplings_h[i * self.n_qubits + j]
    }
}

/// Dense Ising Hamiltonian. The coupling sum runs over ordered pairs, so an
/// unordered pair `{i, j}` contributes `2 J h_ij X_i X_j`.
pub fn build_hamiltonian(params: &IsingParams) -> CMatrix {
    let n = params.n_qubits;
    let d = 1usize << n;
    let j = params.coupling_j;
    let mut h = CMatrix::zeros(d, d);
    for b in 0..d {
        let mut diag = 0.0;
        for (s, g) in params.fields_g.iter().enumerate() {
            let z = if b & bit_of(n, s) == 0 { 1.0 } else { -1.0 };
            diag += j * g * z;
        }
        h[(b, b)] += Complex64::new(diag, 0.0);
        for p in 0..n {
            for q in 0..n {
                if p == q {
                    continue;
                }
                let flipped = b ^ bit_of(n, p) ^ bit_of(n, q);
                h[(flipped, b)] += Complex64::new(j * params.h(p, q), 0.0);
            }
        }
    }
    h
}

/// `exp(-i H dt)` together with its step length.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryPropagator {
    pub dt: f64,
    pub u: CMatrix,
}

impl UnitaryPropagator {
    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `max |U†U − I|`.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        let p = self.u.adjoint() * &self.u;
        (p - CMatrix::identity(d, d)).camax()
    }
}

/// Propagator from the Hermitian eigendecomposition `H = QΛQ†`.
pub fn propagator(h: &CMatrix, dt: f64) -> Result<UnitaryPropagator> {
    if h.nrows() != h.ncols() {
        return Err(domain("Hamiltonian must be square"));
    }
    if !dt.is_finite() {
        return Err(domain("dt must be finite"));
    }
    let hs = hermitian_part(h);
    if hs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numeric("Hamiltonian has non-finite entries".into()));
    }
    let eig = hs.symmetric_eigen();
    let q = &eig.eigenvectors;
    let phases = eig
        .eigenvalues
        .map(|lambda| Complex64::from_polar(1.0, -lambda * dt));
    let mut qp = q.clone();
    for (c, ph) in phases.iter().enumerate() {
        for r in 0..qp.nrows() {
            qp[(r, c)] *= ph;
        }
    }
    let prop = UnitaryPropagator {
        dt,
        u: qp * q.adjoint(),
    };
    let err = prop.unitarity_error();
    if !(err <= 1e-9) {
        return Err(Error::Numeric(format!(
            "eigendecomposition produced a non-unitary propagator (error {err:e})"
        )));
    }
    Ok(prop)
}

/// `Tr_1[ρ]`: traces out qubit 0.
pub fn partial_trace_first(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.n_qubits < 2 {
        return Err(domain("partial trace needs at least two qubits"));
    }
    let half = rho.dim() / 2;
    let m = &rho.rho;
    let out = CMatrix::from_fn(half, half, |b, c| m[(b, c)] + m[(half + b, half + c)]);
    DensityMatrix::from_matrix(out)
}

/// Input injection `ρ ↦ ρ_u ⊗ Tr_1[ρ]` with `ρ_u = (1−u)|0⟩⟨0| + u|1⟩⟨1|`.
///
/// For a single qubit this replaces the state with `ρ_u`.
pub fn inject_input(rho: &DensityMatrix, u: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&u) {
        return Err(domain(format!(
            "input {u} outside [0, 1]; clip before injecting"
        )));
    }
    let d = rho.dim();
    if rho.n_qubits == 1 {
        let mut out = CMatrix::zeros(2, 2);
        out[(0, 0)] = Complex64::new(1.0 - u, 0.0);
        out[(1, 1)] = Complex64::new(u, 0.0);
        return DensityMatrix::from_matrix(out);
    }
    let half = d / 2;
    let m = &rho.rho;
    let (w0, w1) = (1.0 - u, u);
    let mut out = CMatrix::zeros(d, d);
    for c in 0..half {
        for b in 0..half {
            let reduced = m[(b, c)] + m[(half + b, half + c)];
            out[(b, c)] = reduced * w0;
            out[(half + b, half + c)] = reduced * w1;
        }
    }
    DensityMatrix::from_matrix(out)
}

/// `UρU†`.
pub fn evolve(rho: &DensityMatrix, u: &UnitaryPropagator) -> Result<DensityMatrix> {
    if rho.dim() != u.dim() {
        return Err(domain(format!(
            "state dimension {} does not match propagator dimension {}",
            rho.dim(),
            u.dim()
        )));
    }
    let out = &u.u * &rho.rho * u.u.adjoint();
    DensityMatrix::from_matrix(out)
}

/// A list of Hermitian observables over a common register.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    operators: Vec<CMatrix>,
}

impl ObservableSet {
    /// `σ^axis_j` for every qubit `j`.
    pub fn single_site(n_qubits: usize, axis: Axis) -> Result<Self> {
        let operators = (0..n_qubits)
            .map(|s| embed_pauli(n_qubits, s, axis))
            .collect::<Result<_>>()?;
        Ok(Self { operators })
    }

    pub fn pauli_z(n_qubits: usize) -> Result<Self> {
        Self::single_site(n_qubits, Axis::Z)
    }

    pub fn from_operators(operators: Vec<CMatrix>) -> Result<Self> {
        let Some(first) = operators.first() else {
            return Err(domain("observable set is empty"));
        };
        let d = first.nrows();
        for op in &operators {
            if op.nrows() != d || op.ncols() != d {
                return Err(domain("observables must share one square dimension"));
            }
            if (op - op.adjoint()).camax() > 1e-12 {
                return Err(domain("observable is not Hermitian"));
            }
        }
        Ok(Self { operators })
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn dim(&self) -> usize {
        self.operators.first().map_or(0, |o| o.nrows())
    }
}

/// `s_j = Re Tr[ρ O_j]`.
pub fn measure(rho: &DensityMatrix, obs: &ObservableSet) -> Result<Vec<f64>> {
    if rho.dim() != obs.dim() {
        return Err(domain("observable dimension does not match the state"));
    }
    let d = rho.dim();
    let m = &rho.rho;
    Ok(obs
        .operators
        .iter()
        .map(|o| {
            let mut acc = C0;
            for i in 0..d {
                for j in 0..d {
                    acc += m[(i, j)] * o[(j, i)];
                }
            }
            acc.re
        })
        .collect())
}

/// Evolution in the eigenbasis of a real symmetric Hamiltonian.
///
/// A state is carried as the pair `(Re ρ', Im ρ')` with `ρ' = Qᵀ ρ Q`. One
/// substep of length `dt` is then an elementwise phase rotation, and a
/// diagonal observable `O` is read through `Qᵀ O Q`. Basis changes cost four
/// real matrix products, so a run of `V` substeps costs two basis changes
/// instead of `2V` dense complex products.
#[derive(Debug, Clone)]
pub struct EigenFrame {
    q: DMatrix<f64>,
    cos: DMatrix<f64>,
    sin: DMatrix<f64>,
    /// Upper triangles (column by column) of the rotated observables with
    /// off-diagonal entries doubled; the state is symmetric in the real part.
    packed: Vec<Vec<f64>>,
    n_observables: usize,
    pub dt: f64,
}

impl EigenFrame {
    /// `h` must be real symmetric (any imaginary part is rejected).
    pub fn new(h: &CMatrix, dt: f64, observables: &ObservableSet) -> Result<Self> {
        if h.iter().any(|z| z.im != 0.0) {
            return Err(domain("eigen-frame evolution needs a real Hamiltonian"));
        }
        if observables.dim() != h.nrows() {
            return Err(domain(
                "observable dimension does not match the Hamiltonian",
            ));
        }
        let re = h.map(|z| z.re);
        let re = (&re + re.transpose()) * 0.5;
        let eig = re.symmetric_eigen();
        let d = h.nrows();
        let energies = eig.eigenvalues;
        let q = eig.eigenvectors;
        let cos = DMatrix::from_fn(d, d, |a, b| ((energies[a] - energies[b]) * dt).cos());
        let sin = DMatrix::from_fn(d, d, |a, b| (-(energies[a] - energies[b]) * dt).sin());
        let rotated = observables
            .operators()
            .iter()
            .map(|o| {
                if o.iter().any(|z| z.im != 0.0) {
                    return Err(domain("eigen-frame observables must be real"));
                }
                let o = o.map(|z| z.re);
                Ok(q.transpose() * o * &q)
            })
            .collect::<Result<Vec<_>>>()?;
        let packed = rotated
            .iter()
            .map(|o| {
                let mut t = Vec::with_capacity(d * (d + 1) / 2);
                for b in 0..d {
                    for a in 0..=b {
                        let wt = if a == b { 1.0 } else { 2.0 };
                        t.push(wt * 0.5 * (o[(a, b)] + o[(b, a)]));
                    }
                }
                t
            })
            .collect();
        Ok(Self {
            q,
            cos,
            sin,
            packed,
            n_observables: rotated.len(),
            dt,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_observables(&self) -> usize {
        self.n_observables
    }

    /// `ρ ↦ (Re Qᵀ ρ Q, Im Qᵀ ρ Q)`.
    pub fn enter(&self, rho: &DensityMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
        let re = rho.rho.map(|z| z.re);
        let im = rho.rho.map(|z| z.im);
        let qt = self.q.transpose();
        (&qt * re * &self.q, &qt * im * &self.q)
    }

    /// Inverse of [`EigenFrame::enter`].
    pub fn leave(&self, re: &DMatrix<f64>, im: &DMatrix<f64>) -> Result<DensityMatrix> {
        let qt = self.q.transpose();
        let r = &self.q * re * &qt;
        let i = &self.q * im * &qt;
        DensityMatrix::from_matrix(CMatrix::from_fn(r.nrows(), r.ncols(), |a, b| {
            Complex64::new(r[(a, b)], i[(a, b)])
        }))
    }

    /// Input injection without leaving the frame; equal to
    /// `enter(inject_input(leave(re, im), u))`. With `Q_0`, `Q_1` the upper and
    /// lower row halves of `Q`, `Tr_1 ρ = Σ_a Q_a ρ' Q_aᵀ` and
    /// `ρ_u ⊗ σ ↦ (1−u)·Q_0ᵀσQ_0 + u·Q_1ᵀσQ_1`.
    pub fn inject(&self, re: &mut DMatrix<f64>, im: &mut DMatrix<f64>, u: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&u) {
            return Err(domain(format!(
                "input {u} outside [0, 1]; clip before injecting"
            )));
        }
        let h = self.dim() / 2;
        let q0 = self.q.rows(0, h);
        let q1 = self.q.rows(h, h);
        // The map is a sum of real congruences and commutes with transposition,
        // so one pass over re + im yields both parts as its symmetric and
        // antisymmetric halves.
        let p = &self.q * (&*re + &*im);
        let sigma = p.rows(0, h) * q0.transpose() + p.rows(h, h) * q1.transpose();
        let a = q0.transpose() * &sigma * q0;
        let b = q1.transpose() * &sigma * q1;
        let m = a * (1.0 - u) + b * u;
        let d = self.dim();
        for c in 0..d {
            for r in 0..d {
                let (x, y) = (m[(r, c)], m[(c, r)]);
                re[(r, c)] = 0.5 * (x + y);
                im[(r, c)] = 0.5 * (x - y);
            }
        }
        Ok(())
    }

    /// Rebuilds the lower triangles from the upper ones (symmetric real part,
    /// antisymmetric imaginary part) and restores unit trace.
    pub fn tidy(&self, re: &mut DMatrix<f64>, im: &mut DMatrix<f64>) {
        let d = self.dim();
        for a in 0..d {
            for b in a + 1..d {
                re[(b, a)] = re[(a, b)];
                im[(b, a)] = -im[(a, b)];
            }
            im[(a, a)] = 0.0;
        }
        let tr = re.trace();
        if tr > 0.0 {
            *re /= tr;
            *im /= tr;
        }
    }

    /// One substep: `ρ'_ab ← exp(-i (E_a − E_b) dt) ρ'_ab`.
    pub fn advance(&self, re: &mut DMatrix<f64>, im: &mut DMatrix<f64>) {
        let (c, s) = (self.cos.as_slice(), self.sin.as_slice());
        for (k, (r, i)) in re
            .as_mut_slice()
            .iter_mut()
            .zip(im.as_mut_slice().iter_mut())
            .enumerate()
        {
            let (x, y) = (*r, *i);
            *r = x * c[k] - y * s[k];
            *i = x * s[k] + y * c[k];
        }
    }

    /// Expectations of the observables for an eigen-frame state. The imaginary
    /// part of `ρ'` is antisymmetric and the rotated observables symmetric, so
    /// only the upper triangle of the real part contributes.
    pub fn measure(&self, re: &DMatrix<f64>, out: &mut [f64]) {
        let d = self.dim();
        let x = re.as_slice();
        let mut upper = Vec::with_capacity(d * (d + 1) / 2);
        for b in 0..d {
            upper.extend_from_slice(&x[b * d..=b * d + b]);
        }
        self.measure_packed(&upper, out);
    }

    /// [`EigenFrame::advance`] followed by [`EigenFrame::measure`], touching
    /// only the upper triangles. The lower triangles go stale until
    /// [`EigenFrame::tidy`]. `upper` is scratch space.
    pub fn advance_measure(
        &self,
        re: &mut DMatrix<f64>,
        im: &mut DMatrix<f64>,
        out: &mut [f64],
        upper: &mut Vec<f64>,
    ) {
        let d = self.dim();
        let (c, s) = (self.cos.as_slice(), self.sin.as_slice());
        let (re, im) = (re.as_mut_slice(), im.as_mut_slice());
        upper.clear();
        for b in 0..d {
            let col = b * d..b * d + b + 1;
            let n = col.len();
            let (r, i) = (&mut re[col.clone()], &mut im[col.clone()]);
            let (cv, sv) = (&c[col.clone()], &s[col]);
            for k in 0..n {
                let (x, y) = (r[k], i[k]);
                r[k] = x * cv[k] - y * sv[k];
                i[k] = x * sv[k] + y * cv[k];
            }
            upper.extend_from_slice(r);
        }
        self.measure_packed(upper, out);
    }

    fn measure_packed(&self, upper: &[f64], out: &mut [f64]) {
        for (o, slot) in self.packed.iter().zip(out.iter_mut()) {
            *slot = dot(o, upper);
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The summation order is fixed, so results stay reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
