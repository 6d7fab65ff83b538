//! Identifiability geometry of the closed loop: the null-space and level-set
//! of the optimal-gain map, their intersection `P0` (the asymptotic
//! uncertainty set of any sublinear-regret policy), the unfalsifiable set,
//! the tangent space of the optimality manifold, and the empirical
//! identifiability checker for side-information sets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::linalg::{self, op_norm, DEFAULT_RANK_TOL};
use crate::system::{CostSpec, DynamicsParameter};

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Linalg(linalg::Error),
    /// Operation not defined for this side-information kind.
    Unsupported(&'static str),
    BadInput(String),
}

impl From<linalg::Error> for Error {
    fn from(e: linalg::Error) -> Self {
        Error::Linalg(e)
    }
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::Linalg(e) => write!(f, "{e}"),
            Error::Unsupported(what) => write!(f, "unsupported side-information kind: {what}"),
            Error::BadInput(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {}

/// An affine subspace of parameter space: a base point plus a basis of the
/// linear part, mutually orthonormal under the trace inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    pub base: DMatrix<f64>,
    pub basis: Vec<DMatrix<f64>>,
}

impl AffineSubspace {
    /// The subspace `{base + d : tr(d' c_i) = 0 for all i}` cut out by
    /// trace-orthogonality constraints.
    pub fn from_orthogonality_constraints(
        base: DMatrix<f64>,
        constraints: &[DMatrix<f64>],
        tol: f64,
    ) -> Result<Self, Error> {
        let (rows, cols) = base.shape();
        let n = rows * cols;
        for c in constraints {
            if c.shape() != (rows, cols) {
                return Err(Error::BadInput("constraint shape mismatch".into()));
            }
        }
        let mut stack = DMatrix::zeros(constraints.len(), n);
        for (i, c) in constraints.iter().enumerate() {
            for (j, v) in c.iter().enumerate() {
                stack[(i, j)] = *v;
            }
        }
        let basis = linalg::null_space(&stack, tol)
            .into_iter()
            .map(|v| DMatrix::from_column_slice(rows, cols, v.as_slice()))
            .collect();
        Ok(Self { base, basis })
    }

    /// Dimension of the linear part.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Coefficients of the Frobenius-orthogonal projection of `m - base`
    /// onto the linear part.
    pub fn coefficients(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let delta = m - &self.base;
        self.basis.iter().map(|b| linalg::trace_inner(b, &delta)).collect()
    }

    /// Closest member of the subspace in Frobenius norm.
    pub fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.base.clone();
        for (b, c) in self.basis.iter().zip(self.coefficients(m)) {
            out += b * c;
        }
        out
    }

    /// Operator norm of the residual after projecting onto the subspace.
    /// Exact distance when the subspace is a single point.
    pub fn op_distance(&self, m: &DMatrix<f64>) -> f64 {
        op_norm(&(m - self.project(m)))
    }

    /// Whether `m` lies in the subspace up to an absolute residual tolerance.
    pub fn contains(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        self.op_distance(m) <= tol
    }
}

/// A known support pattern: the set of entries allowed to be non-zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPattern {
    pub rows: usize,
    pub cols: usize,
    pub allowed: BTreeSet<(usize, usize)>,
}

impl SupportPattern {
    pub fn full(rows: usize, cols: usize) -> Self {
        let allowed = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
        Self { rows, cols, allowed }
    }

    /// Pattern of the entries of `m` exceeding `tol` in magnitude.
    pub fn from_nonzeros(m: &DMatrix<f64>, tol: f64) -> Self {
        let mut allowed = BTreeSet::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)].abs() > tol {
                    allowed.insert((i, j));
                }
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), allowed }
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed.contains(&(i, j))
    }

    pub fn size(&self) -> usize {
        self.allowed.len()
    }

    /// Whether `m` vanishes (up to `tol`) outside the pattern.
    pub fn contains(&self, m: &DMatrix<f64>, tol: f64) -> bool {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if !self.allows(i, j) && m[(i, j)].abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// A side-information constraint set for the dynamics parameter.
///
/// Support patterns and affine subspaces admit exact constrained least
/// squares; the sparsity and rank budgets are nonconvex families for which
/// only membership tests are provided.
#[derive(Debug, Clone, PartialEq)]
pub enum SideInformation {
    Support(SupportPattern),
    Subspace(AffineSubspace),
    SparsityBudget(usize),
    RankBudget(usize),
}

impl SideInformation {
    /// Membership test at tolerance `tol`.
    pub fn contains(&self, theta: &DMatrix<f64>, tol: f64) -> bool {
        match self {
            SideInformation::Support(p) => p.contains(theta, tol),
            SideInformation::Subspace(s) => s.contains(theta, tol),
            SideInformation::SparsityBudget(s) => {
                theta.iter().filter(|v| v.abs() > tol).count() <= *s
            }
            SideInformation::RankBudget(d) => linalg::rank(theta, DEFAULT_RANK_TOL) <= *d,
        }
    }

    /// Dimension of the constraint family as a manifold (upper bound for
    /// the budget kinds).
    pub fn dimension(&self, p: usize, q: usize) -> usize {
        match self {
            SideInformation::Support(pat) => pat.size(),
            SideInformation::Subspace(s) => s.dim(),
            SideInformation::SparsityBudget(s) => *s,
            SideInformation::RankBudget(d) => d * (p + q - d),
        }
    }

    /// The dimension inequality under which the family can be identifiable:
    /// dimension at most `pq - rank(A0) * r`.
    pub fn satisfies_dimension_bound(&self, rank_a0: usize, p: usize, r: usize) -> bool {
        let q = p + r;
        self.dimension(p, q) <= p * q - rank_a0 * r
    }

    /// Orthonormal basis of the constraint's linear part (directions along
    /// which members may vary). Budget kinds are not linear families.
    fn linear_basis(&self, p: usize, q: usize) -> Result<Vec<DMatrix<f64>>, Error> {
        match self {
            SideInformation::Support(pat) => {
                if pat.rows != p || pat.cols != q {
                    return Err(Error::BadInput("support pattern shape mismatch".into()));
                }
                Ok(pat
                    .allowed
                    .iter()
                    .map(|&(i, j)| {
                        let mut e = DMatrix::zeros(p, q);
                        e[(i, j)] = 1.0;
                        e
                    })
                    .collect())
            }
            SideInformation::Subspace(s) => Ok(s.basis.clone()),
            _ => Err(Error::Unsupported("budget constraints have no linear basis")),
        }
    }
}

/// Closed-loop transition matrix of the plant `theta` when driven by the
/// optimal gain of `feedback_owner`: `theta * [I; L(feedback_owner)]`.
pub fn closed_loop(
    theta: &DynamicsParameter,
    feedback_owner: &DynamicsParameter,
    cost: &CostSpec,
) -> Result<DMatrix<f64>, Error> {
    let sol = feedback_owner.riccati(cost)?;
    Ok(theta.as_matrix() * sol.extended_feedback())
}

/// The asymptotic uncertainty set `P0`: parameters sharing both the optimal
/// gain and the closed loop of `theta0`. Returned as an affine subspace of
/// dimension `(p - rank A0) * r`, constructed from the orthogonality system
/// `D0' K (B - B0) = 0` with `A = D0 - B L(theta0)`.
pub fn construct_p0(theta0: &DynamicsParameter, cost: &CostSpec) -> Result<AffineSubspace, Error> {
    let sol = theta0.riccati(cost)?;
    let d0 = theta0.closed_loop(&sol.gain);
    let p = theta0.state_dim();
    let r = theta0.input_dim();
    // Columns of B - B0 must be orthogonal to the columns of K D0.
    let constraint = d0.transpose() * &sol.k;
    let kernel = linalg::null_space(&constraint, DEFAULT_RANK_TOL);
    let mut directions = Vec::with_capacity(kernel.len() * r);
    for v in &kernel {
        for j in 0..r {
            let mut delta_b = DMatrix::zeros(p, r);
            delta_b.column_mut(j).copy_from(v);
            let delta_a = -&delta_b * &sol.gain;
            let mut dir = DMatrix::zeros(p, p + r);
            dir.view_mut((0, 0), (p, p)).copy_from(&delta_a);
            dir.view_mut((0, p), (p, r)).copy_from(&delta_b);
            directions.push(dir);
        }
    }
    let basis = linalg::orthonormalize_trace(&directions, 1e-10);
    Ok(AffineSubspace { base: theta0.as_matrix(), basis })
}

/// Outcome of the two membership tests defining `P0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MembershipReport {
    /// Gain distance `||L(theta) - L(theta0)||` and the level-set verdict.
    pub feedback_distance: f64,
    pub same_feedback: bool,
    /// Closed-loop distance under `L(theta0)` and the null-space verdict.
    pub closed_loop_distance: f64,
    pub same_closed_loop: bool,
    /// Distance between the Riccati fixed points (the shared-`K` identity).
    pub riccati_distance: f64,
}

/// Test whether `theta` lies in the level set and the shifted null space of
/// `theta0` at the standard tolerances.
pub fn verify_p0_membership(
    theta: &DynamicsParameter,
    theta0: &DynamicsParameter,
    cost: &CostSpec,
) -> Result<MembershipReport, Error> {
    let sol = theta.riccati(cost)?;
    let sol0 = theta0.riccati(cost)?;
    let feedback_distance = op_norm(&(&sol.gain - &sol0.gain));
    let lt0 = sol0.extended_feedback();
    let closed_loop_distance =
        op_norm(&(theta.as_matrix() * &lt0 - theta0.as_matrix() * &lt0));
    let riccati_distance = op_norm(&(&sol.k - &sol0.k));
    Ok(MembershipReport {
        feedback_distance,
        same_feedback: feedback_distance <= 1e-6,
        closed_loop_distance,
        same_closed_loop: closed_loop_distance <= 1e-8,
        riccati_distance,
    })
}

/// Whether `theta` is unfalsifiable from closed-loop data gathered under its
/// own optimal gain: `theta0 L~(theta) = theta L~(theta)`.
pub fn unfalsifiable_test(
    theta: &DynamicsParameter,
    theta0: &DynamicsParameter,
    cost: &CostSpec,
) -> Result<bool, Error> {
    let sol = theta.riccati(cost)?;
    let lt = sol.extended_feedback();
    let gap = op_norm(&(theta0.as_matrix() * &lt - theta.as_matrix() * &lt));
    Ok(gap <= 1e-8)
}

/// Numerical dimension of the tangent space of the optimal-gain level set at
/// `theta0`, via the exact linearized stationarity system (one Lyapunov
/// solve per probe direction). Equals
/// `p^2 + (p - rank A0)(r - rank B0)`.
pub fn tangent_dimension(
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    probe_count: usize,
) -> Result<usize, Error> {
    let p = theta0.state_dim();
    let r = theta0.input_dim();
    let q = p + r;
    let n_dirs = p * q;
    if probe_count < n_dirs {
        return Err(Error::BadInput(format!(
            "probe count {probe_count} below parameter dimension {n_dirs}"
        )));
    }
    let sol = theta0.riccati(cost)?;
    let d0 = theta0.closed_loop(&sol.gain);
    let image = |m: &DMatrix<f64>, n: &DMatrix<f64>| -> Result<DMatrix<f64>, Error> {
        let z = &sol.k * (m + n * &sol.gain);
        let rhs = d0.transpose() * &z + z.transpose() * &d0;
        let delta = linalg::solve_lyapunov(&d0, &rhs)?;
        Ok(theta0.b.transpose() * &z
            + (n.transpose() * &sol.k + theta0.b.transpose() * &delta) * &d0)
    };
    let mut rng = ChaCha12Rng::seed_from_u64(0x7a4de7);
    let mut columns = DMatrix::zeros(r * p, probe_count);
    for idx in 0..probe_count {
        let (m, n) = if idx < n_dirs {
            // Standard basis direction [M, N] = E_idx.
            let mut dir = DMatrix::zeros(p, q);
            dir[(idx / q, idx % q)] = 1.0;
            (dir.view((0, 0), (p, p)).into_owned(), dir.view((0, p), (p, r)).into_owned())
        } else {
            // Extra random probes only re-span the same column space; they
            // serve as a linearity cross-check.
            (
                DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal)),
                DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal)),
            )
        };
        let g = image(&m, &n)?;
        for (row, v) in g.iter().enumerate() {
            columns[(row, idx)] = *v;
        }
    }
    let map_rank = linalg::rank(&columns, DEFAULT_RANK_TOL);
    Ok(n_dirs - map_rank)
}

/// Result of the empirical identifiability check over a side-information
/// set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    /// No violating pair was found.
    pub holds: bool,
    /// Largest observed ratio `||L(t2)-L(t0)|| / ||(t2-t0) L~(t1)||`, the
    /// empirical identifiability constant.
    pub max_ratio: f64,
    /// Number of sampled pairs that produced a usable ratio.
    pub samples_used: usize,
    /// Violating pairs found (vanishing denominator with a non-vanishing
    /// numerator).
    pub violations: usize,
}

/// Empirically probe the identifiability condition over `side`: sample
/// stabilizable pairs near `theta0` within the constraint set and bound the
/// gain-to-closed-loop error ratio; additionally probe the constraint
/// directions that are invisible to closed-loop identification.
///
/// This is a sampled check, not a certificate: the condition quantifies
/// over all pairs in the constraint set, so a bounded observed ratio can in
/// principle miss a violation outside the sampled neighborhood. The
/// targeted null-direction probes remove the known first-order failure
/// mode; curvature-driven failures far from `theta0` remain out of reach.
pub fn identifiability_check(
    side: &SideInformation,
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<IdentifiabilityReport, Error> {
    match side {
        SideInformation::Support(_) | SideInformation::Subspace(_) => {}
        SideInformation::SparsityBudget(_) | SideInformation::RankBudget(_) => {
            return Err(Error::Unsupported("budget kinds cannot be sampled"))
        }
    }
    let p = theta0.state_dim();
    let r = theta0.input_dim();
    let q = p + r;
    let sol0 = theta0.riccati(cost)?;
    let lt0 = sol0.extended_feedback();
    let basis = side.linear_basis(p, q)?;
    let theta0_mat = theta0.as_matrix();

    let mut report = IdentifiabilityReport {
        holds: true,
        max_ratio: 0.0,
        samples_used: 0,
        violations: 0,
    };
    if basis.is_empty() {
        // The singleton {theta0}: the gain error vanishes identically.
        return Ok(report);
    }

    let gain_of = |mat: &DMatrix<f64>| -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let theta = DynamicsParameter::from_matrix(mat, r).ok()?;
        let sol = theta.riccati(cost).ok()?;
        Some((sol.gain.clone(), sol.extended_feedback()))
    };

    // Targeted probes: directions inside the constraint set along which the
    // closed loop under L(theta0) does not move. If the optimal gain does
    // move along such a direction, no finite constant can exist
    // (theta1 = theta0 zeroes the denominator).
    let mut stacked = DMatrix::zeros(p * p, basis.len());
    for (idx, b) in basis.iter().enumerate() {
        let img = b * &lt0;
        for (row, v) in img.iter().enumerate() {
            stacked[(row, idx)] = *v;
        }
    }
    for combo in linalg::null_space(&stacked, DEFAULT_RANK_TOL) {
        let mut dir = DMatrix::zeros(p, q);
        for (idx, b) in basis.iter().enumerate() {
            dir += b * combo[idx];
        }
        let norm = dir.norm();
        if norm < 1e-12 {
            continue;
        }
        dir /= norm;
        let mut scale = radius;
        for _ in 0..6 {
            let candidate = &theta0_mat + &dir * scale;
            if let Some((gain, _)) = gain_of(&candidate) {
                let numerator = op_norm(&(&gain - &sol0.gain));
                if numerator > 1e-6 {
                    report.holds = false;
                    report.violations += 1;
                    report.max_ratio = f64::INFINITY;
                }
                break;
            }
            scale /= 2.0;
        }
    }

    // Random pair sampling within the constraint set.
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sample_dir = |rng: &mut ChaCha12Rng| -> DMatrix<f64> {
        let mut dir = DMatrix::zeros(p, q);
        for b in &basis {
            dir += b * rng.sample::<f64, _>(StandardNormal);
        }
        let norm = dir.norm();
        if norm > 1e-12 {
            dir /= norm;
        }
        dir
    };
    let shrinkages = [1.0, 0.1, 0.01];
    for k in 0..sample_count {
        let r1 = radius * shrinkages[k % shrinkages.len()];
        let theta1 = &theta0_mat + sample_dir(&mut rng) * r1;
        let theta2 = &theta0_mat + sample_dir(&mut rng) * radius;
        let (Some((_, lt1)), Some((gain2, _))) = (gain_of(&theta1), gain_of(&theta2)) else {
            continue;
        };
        let numerator = op_norm(&(&gain2 - &sol0.gain));
        let denominator = op_norm(&((&theta2 - &theta0_mat) * &lt1));
        report.samples_used += 1;
        if denominator <= 1e-10 * radius {
            if numerator > 1e-6 {
                report.holds = false;
                report.violations += 1;
                report.max_ratio = f64::INFINITY;
            }
            continue;
        }
        report.max_ratio = report.max_ratio.max(numerator / denominator);
    }
    Ok(report)
}

/// Largest observed ratio `||L(theta) - L(theta0)|| / ||theta - theta0||`
/// over random stabilizable parameters within `radius` of `theta0` — the
/// empirical local Lipschitz constant of the optimal-gain map.
pub fn local_lipschitz_ratio(
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64, Error> {
    let p = theta0.state_dim();
    let r = theta0.input_dim();
    let q = p + r;
    let sol0 = theta0.riccati(cost)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_ratio = 0.0_f64;
    for _ in 0..samples {
        let mut g = DMatrix::from_fn(p, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = op_norm(&g);
        if norm < 1e-12 {
            continue;
        }
        g *= radius / norm;
        let candidate = theta0.as_matrix() + &g;
        let Ok(theta) = DynamicsParameter::from_matrix(&candidate, r) else {
            continue;
        };
        let Ok(sol) = theta.riccati(cost) else {
            continue;
        };
        let ratio = op_norm(&(&sol.gain - &sol0.gain)) / radius;
        max_ratio = max_ratio.max(ratio);
    }
    Ok(max_ratio)
}

/// Side information of the null-orthogonality kind: constraints
/// `tr(theta' theta_i) = 0` against `rank(A0) * r` independent directions
/// that are invisible to closed-loop identification yet move the optimal
/// gain. Removing them from the constraint set makes `theta0` identifiable.
pub fn null_orthogonality_side_information(
    theta0: &DynamicsParameter,
    cost: &CostSpec,
) -> Result<SideInformation, Error> {
    let sol = theta0.riccati(cost)?;
    let d0 = theta0.closed_loop(&sol.gain);
    let p = theta0.state_dim();
    let r = theta0.input_dim();
    // Orthonormal basis of the column span of K D0 (dimension rank A0).
    let kd0 = &sol.k * &d0;
    let svd = nalgebra::SVD::new(kd0.clone(), true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let mut span = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > DEFAULT_RANK_TOL * smax {
            span.push(u.column(i).into_owned());
        }
    }
    let mut constraints = Vec::with_capacity(span.len() * r);
    for w in &span {
        for j in 0..r {
            let mut delta_b = DMatrix::zeros(p, r);
            delta_b.column_mut(j).copy_from(w);
            let delta_a = -&delta_b * &sol.gain;
            let mut dir = DMatrix::zeros(p, p + r);
            dir.view_mut((0, 0), (p, p)).copy_from(&delta_a);
            dir.view_mut((0, p), (p, r)).copy_from(&delta_b);
            constraints.push(dir);
        }
    }
    let aff = AffineSubspace::from_orthogonality_constraints(
        theta0.as_matrix(),
        &constraints,
        DEFAULT_RANK_TOL,
    )?;
    Ok(SideInformation::Subspace(aff))
}

/// Synthetic plants with prescribed transition/input ranks, for exercising
/// the dimension formulas. The transition matrix is scaled to spectral
/// radius 0.75 so every instance is stabilizable regardless of the input
/// rank.
pub mod instances {
    use super::*;

    pub fn with_ranks(
        seed: u64,
        p: usize,
        r: usize,
        rank_a: usize,
        rank_b: usize,
    ) -> DynamicsParameter {
        assert!(rank_a <= p && rank_b <= r.min(p));
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut gauss =
            |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
        let a = if rank_a == 0 {
            DMatrix::zeros(p, p)
        } else {
            let mut a = &gauss(p, rank_a) * gauss(rank_a, p);
            let rho = linalg::spectral_radius(&a).expect("finite synthetic matrix").radius;
            if rho > 0.0 {
                a *= 0.75 / rho;
            }
            a
        };
        let b = if rank_b == 0 {
            DMatrix::zeros(p, r)
        } else {
            &gauss(p, rank_b) * gauss(rank_b, r)
        };
        DynamicsParameter::new(a, b).expect("synthetic dimensions are consistent")
    }
}

/// JSON-serializable summary of the geometry diagnostics for one plant.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub state_dim: usize,
    pub input_dim: usize,
    pub rank_a0: usize,
    pub rank_b0: usize,
    pub p0_dimension: usize,
    pub p0_expected_dimension: usize,
    pub p0_basis: Vec<Vec<Vec<f64>>>,
    pub p0_member_checks: Vec<MembershipReport>,
    pub tangent_dimension: usize,
    pub tangent_expected_dimension: usize,
    pub unfalsifiable_random_hits: usize,
    pub unfalsifiable_random_trials: usize,
    pub lipschitz_ratio_at_005: f64,
    pub lipschitz_ratio_at_0025: f64,
}

/// Run the full geometry battery on one plant.
pub fn geometry_report(
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    seed: u64,
) -> Result<GeometryReport, Error> {
    let p = theta0.state_dim();
    let r = theta0.input_dim();
    let rank_a0 = linalg::rank(&theta0.a, DEFAULT_RANK_TOL);
    let rank_b0 = linalg::rank(&theta0.b, DEFAULT_RANK_TOL);
    let p0 = construct_p0(theta0, cost)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut member_checks = Vec::new();
    for b in &p0.basis {
        let coeff = 0.5 * rng.sample::<f64, _>(StandardNormal);
        let member = &p0.base + b * coeff;
        let member = DynamicsParameter::from_matrix(&member, r)
            .map_err(|e| Error::BadInput(e.to_string()))?;
        member_checks.push(verify_p0_membership(&member, theta0, cost)?);
    }
    let trials = 200;
    let mut hits = 0;
    for _ in 0..trials {
        let g = DMatrix::from_fn(p, p + r, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.2;
        let candidate = theta0.as_matrix() + g;
        let Ok(theta) = DynamicsParameter::from_matrix(&candidate, r) else { continue };
        if let Ok(true) = unfalsifiable_test(&theta, theta0, cost) {
            hits += 1;
        }
    }
    Ok(GeometryReport {
        state_dim: p,
        input_dim: r,
        rank_a0,
        rank_b0,
        p0_dimension: p0.dim(),
        p0_expected_dimension: (p - rank_a0) * r,
        p0_basis: p0.basis.iter().map(matrix_rows).collect(),
        p0_member_checks: member_checks,
        tangent_dimension: tangent_dimension(theta0, cost, p * (p + r))?,
        tangent_expected_dimension: p * p + (p - rank_a0) * (r - rank_b0),
        unfalsifiable_random_hits: hits,
        unfalsifiable_random_trials: trials,
        lipschitz_ratio_at_005: local_lipschitz_ratio(theta0, cost, 0.05, 200, seed ^ 0x5a)?,
        lipschitz_ratio_at_0025: local_lipschitz_ratio(theta0, cost, 0.025, 200, seed ^ 0xa5)?,
    })
}

/// Row-major nested-vector view of a matrix (for JSON payloads).
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Rebuild a matrix from nested row vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, Error> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::BadInput("empty matrix".into()));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::BadInput("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}
