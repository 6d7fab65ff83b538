//! Dense real-matrix utilities and the two structured-equation solvers
//! (discrete algebraic Riccati, discrete Lyapunov) the rest of the crate
//! builds on.
//!
//! Everything here is sized for small dense systems (state dimension up to a
//! few tens); robustness is preferred over speed throughout.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Margin subtracted from 1 when classifying a spectral radius as stable,
/// guarding against eigenvalues numerically on the unit circle.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Default relative threshold on singular values for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Iteration cap for the Riccati value iteration.
const RICCATI_MAX_ITER: usize = 100_000;

/// Successive-iterate tolerance for the Riccati value iteration.
const RICCATI_STEP_TOL: f64 = 1e-12;

/// Norm cap beyond which the value iteration is declared divergent.
const RICCATI_DIVERGENCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A square matrix was required.
    NonSquare { rows: usize, cols: usize },
    /// The eigenvalue iteration did not converge (pathological input).
    NoConvergence,
    /// The Lyapunov series diverges because the input has spectral radius >= 1.
    UnstableInput,
    /// The Riccati iteration diverged or produced an unstable closed loop.
    NotStabilizable,
    /// A cost matrix was not symmetric positive definite.
    BadCost,
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::NonSquare { rows, cols } => {
                write!(f, "expected a square matrix, got {rows}x{cols}")
            }
            Error::NoConvergence => write!(f, "eigenvalue iteration failed to converge"),
            Error::UnstableInput => {
                write!(f, "spectral radius >= 1: the Lyapunov series diverges")
            }
            Error::NotStabilizable => {
                write!(f, "Riccati iteration diverged or closed loop is unstable")
            }
            Error::BadCost => write!(f, "cost matrix is not symmetric positive definite"),
        }
    }
}

impl std::error::Error for Error {}

/// Spectral radius of a square matrix together with the stability verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    /// Largest eigenvalue magnitude.
    pub radius: f64,
    /// `radius < 1 - STABILITY_MARGIN`.
    pub is_stable: bool,
}

/// Solution of the discrete algebraic Riccati equation for a given plant.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// The symmetric positive definite fixed point `K`.
    pub k: DMatrix<f64>,
    /// The optimal feedback gain `L = -(B'KB + R)^{-1} B'KA` (r x p).
    pub gain: DMatrix<f64>,
}

impl RiccatiSolution {
    /// Extended feedback `[I_p; L]` (q x p), the map sending a state to the
    /// stacked state/input pair under this gain.
    pub fn extended_feedback(&self) -> DMatrix<f64> {
        extended_feedback(&self.gain)
    }
}

/// Stack the identity on top of a gain: `[I_p; L]`, a (p+r) x p matrix.
pub fn extended_feedback(gain: &DMatrix<f64>) -> DMatrix<f64> {
    let p = gain.ncols();
    let r = gain.nrows();
    let mut out = DMatrix::zeros(p + r, p);
    out.view_mut((0, 0), (p, p)).copy_from(&DMatrix::identity(p, p));
    out.view_mut((p, 0), (r, p)).copy_from(gain);
    out
}

/// Largest eigenvalue magnitude, computed via the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<SpectralReport, Error> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NoConvergence);
    }
    if m.nrows() == 0 {
        return Ok(SpectralReport { radius: 0.0, is_stable: true });
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, RICCATI_MAX_ITER)
        .ok_or(Error::NoConvergence)?;
    let eigs = schur.complex_eigenvalues();
    let radius = eigs.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if !radius.is_finite() {
        return Err(Error::NoConvergence);
    }
    Ok(SpectralReport { radius, is_stable: radius < 1.0 - STABILITY_MARGIN })
}

/// Solve the discrete Lyapunov equation `K - D'KD = P0`, i.e. sum the series
/// `sum_l D'^l P0 D^l`, by squaring the propagator.
pub fn solve_lyapunov(d: &DMatrix<f64>, p0: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
    if d.nrows() != d.ncols() {
        return Err(Error::NonSquare { rows: d.nrows(), cols: d.ncols() });
    }
    if p0.nrows() != p0.ncols() {
        return Err(Error::NonSquare { rows: p0.nrows(), cols: p0.ncols() });
    }
    let report = spectral_radius(d)?;
    if report.radius >= 1.0 {
        return Err(Error::UnstableInput);
    }
    let mut x = sym_part(p0);
    let mut prop = d.clone();
    for _ in 0..200 {
        let term = prop.transpose() * &x * &prop;
        let term_norm = term.norm();
        x += term;
        if term_norm <= f64::EPSILON * (1.0 + x.norm()) {
            break;
        }
        prop = &prop * &prop;
    }
    Ok(sym_part(&x))
}

/// Solve the discrete algebraic Riccati equation by value iteration from
/// `K = Q`, returning the fixed point and the induced optimal gain.
///
/// The iterate is symmetrized every step; divergence past a norm cap or a
/// non-stable resulting closed loop yields [`Error::NotStabilizable`].
pub fn solve_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution, Error> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::NonSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if b.nrows() != p || q.nrows() != p || q.ncols() != p || r.nrows() != b.ncols() {
        return Err(Error::BadCost);
    }
    check_spd(q)?;
    check_spd(r)?;
    if !a.iter().all(|x| x.is_finite()) || !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NotStabilizable);
    }

    let mut k = q.clone();
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITER {
        let btk = b.transpose() * &k;
        let g = &btk * b + r;
        let chol = Cholesky::new(sym_part(&g)).ok_or(Error::NotStabilizable)?;
        let btka = &btk * a;
        let solve = chol.solve(&btka);
        let next = sym_part(&(q + a.transpose() * &k * a - btka.transpose() * &solve));
        if !next.iter().all(|x| x.is_finite()) || next.norm() > RICCATI_DIVERGENCE_CAP {
            return Err(Error::NotStabilizable);
        }
        let step = (&next - &k).norm();
        k = next;
        if step < RICCATI_STEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable);
    }

    let btk = b.transpose() * &k;
    let g = &btk * b + r;
    let chol = Cholesky::new(sym_part(&g)).ok_or(Error::NotStabilizable)?;
    let gain = -chol.solve(&(&btk * a));
    let closed = a + b * &gain;
    if !spectral_radius(&closed)?.is_stable {
        return Err(Error::NotStabilizable);
    }
    Ok(RiccatiSolution { k, gain })
}

/// Residual of a candidate Riccati fixed point, in operator norm.
pub fn riccati_residual(
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> f64 {
    let btk = b.transpose() * k;
    let g = &btk * b + r;
    let btka = &btk * a;
    let inv = Cholesky::new(sym_part(&g)).expect("B'KB + R must be positive definite");
    let rhs = q + a.transpose() * k * a - btka.transpose() * inv.solve(&btka);
    op_norm(&(k - rhs))
}

/// Number of singular values exceeding `tol` times the largest one.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let svals = m.clone().singular_values();
    let smax = svals.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svals.iter().filter(|&&s| s > tol * smax).count()
}

/// Operator (spectral) norm: the largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0_f64, f64::max)
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svals = m.clone().singular_values();
    let smax = svals.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Symmetric part `(M + M') / 2`.
pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sym_part(m));
    let sqrt_vals = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Orthonormal basis of the (right) null space `{v : Mv = 0}`, with a
/// relative singular-value threshold. The matrix is padded with zero rows
/// to at least square shape so the thin SVD exposes the full right factor.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let rows = m.nrows();
    let cols = m.ncols();
    if cols == 0 {
        return Vec::new();
    }
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = nalgebra::SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return (0..cols)
            .map(|i| {
                let mut e = DVector::zeros(cols);
                e[i] = 1.0;
                e
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol * smax {
            out.push(v_t.row(i).transpose());
        }
    }
    out
}

/// Trace inner product `tr(A'B)` of two equally sized matrices.
pub fn trace_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt under the trace inner product, dropping directions
/// whose remainder is below `tol` of the original norm.
pub fn orthonormalize_trace(mats: &[DMatrix<f64>], tol: f64) -> Vec<DMatrix<f64>> {
    let mut basis: Vec<DMatrix<f64>> = Vec::new();
    for m in mats {
        let mut v = m.clone();
        for b in &basis {
            let c = trace_inner(b, &v);
            v -= b * c;
        }
        // Second pass for numerical orthogonality.
        for b in &basis {
            let c = trace_inner(b, &v);
            v -= b * c;
        }
        let norm = trace_inner(&v, &v).sqrt();
        if norm > tol * (1.0 + m.norm()) {
            v /= norm;
            basis.push(v);
        }
    }
    basis
}

fn check_spd(m: &DMatrix<f64>) -> Result<(), Error> {
    if m.nrows() != m.ncols() {
        return Err(Error::BadCost);
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * (1.0 + m.norm()) {
        return Err(Error::BadCost);
    }
    Cholesky::new(sym_part(m)).map(|_| ()).ok_or(Error::BadCost)
}
