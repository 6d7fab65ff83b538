//! Pathwise regret accounting: the cost gap against the noise-coupled
//! optimal trajectory, the exact three-term decomposition of that gap, the
//! normalized rate curves, and the optimal-cost fluctuation diagnostic.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, RiccatiSolution};
use crate::system::{CostSpec, DynamicsParameter, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// The two trajectories do not share horizon and noise realization.
    MismatchedTrajectories,
    /// The trajectory lacks the per-step gain record.
    MissingGains,
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::MismatchedTrajectories => {
                write!(f, "trajectories are not noise-coupled with equal horizons")
            }
            Error::MissingGains => write!(f, "trajectory carries no per-step gain record"),
        }
    }
}

impl std::error::Error for Error {}

/// Everything about the optimal regulator that the regret computations
/// need, solved once per run.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub theta0: DynamicsParameter,
    pub cost: CostSpec,
    pub riccati: RiccatiSolution,
    /// Optimal closed loop `D = A0 + B0 L(theta0)`.
    pub closed_loop: DMatrix<f64>,
    /// Optimal stage matrix `P0 = Q + L'RL`.
    pub stage_matrix: DMatrix<f64>,
    /// Curvature of the cost in the input direction, `M = B0'KB0 + R`.
    pub input_weight: DMatrix<f64>,
    input_weight_sqrt: DMatrix<f64>,
}

impl ReferenceSolution {
    pub fn new(theta0: &DynamicsParameter, cost: &CostSpec) -> Result<Self, linalg::Error> {
        let riccati = theta0.riccati(cost)?;
        let closed_loop = theta0.closed_loop(&riccati.gain);
        let stage_matrix = &cost.q + riccati.gain.transpose() * &cost.r * &riccati.gain;
        let input_weight = theta0.b.transpose() * &riccati.k * &theta0.b + &cost.r;
        let input_weight_sqrt = linalg::psd_sqrt(&input_weight);
        Ok(Self {
            theta0: theta0.clone(),
            cost: cost.clone(),
            riccati,
            closed_loop,
            stage_matrix,
            input_weight,
            input_weight_sqrt,
        })
    }

    /// Optimal long-run average cost `tr(K C)` under noise covariance `C`.
    pub fn optimal_average_cost(&self, noise_cov: &DMatrix<f64>) -> f64 {
        (&self.riccati.k * noise_cov).trace()
    }
}

/// Pathwise regret bookkeeping for one policy run against its noise-coupled
/// optimal twin. All series are indexed by the horizon `n`, with entry 0
/// identically zero.
#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub horizon: usize,
    /// `R(n) = sum_{t<n} [c_t(pi) - c_t(pi*)]`.
    pub regret: Vec<f64>,
    /// `chi_n = sum_{t<n} ||(L* - L_t) x(t)||^2`.
    pub chi: Vec<f64>,
    /// `rho_n = xbar(n)' K xbar(n) - x(n)' K x(n)`.
    pub rho: Vec<f64>,
    /// Applied gains `L_t`.
    pub gains: Vec<DMatrix<f64>>,
}

impl RegretLedger {
    pub fn final_regret(&self) -> f64 {
        *self.regret.last().unwrap_or(&0.0)
    }
}

/// Compare a policy trajectory with its optimal twin step by step.
#[allow(clippy::needless_range_loop)]
pub fn compute_regret(
    traj: &Trajectory,
    opt_traj: &Trajectory,
    reference: &ReferenceSolution,
) -> Result<RegretLedger, Error> {
    if traj.horizon() != opt_traj.horizon() || traj.noises != opt_traj.noises {
        return Err(Error::MismatchedTrajectories);
    }
    if traj.states.first() != opt_traj.states.first() {
        return Err(Error::MismatchedTrajectories);
    }
    let gains = traj.gains.as_ref().ok_or(Error::MissingGains)?;
    let n = traj.horizon();
    let l_opt = &reference.riccati.gain;
    let k = &reference.riccati.k;

    let mut regret = Vec::with_capacity(n + 1);
    let mut chi = Vec::with_capacity(n + 1);
    let mut rho = Vec::with_capacity(n + 1);
    regret.push(0.0);
    chi.push(0.0);
    rho.push(0.0);
    let mut racc = 0.0;
    let mut cacc = 0.0;
    for t in 0..n {
        racc += traj.costs[t] - opt_traj.costs[t];
        cacc += ((l_opt - &gains[t]) * &traj.states[t]).norm_squared();
        regret.push(racc);
        chi.push(cacc);
        let xb = &opt_traj.states[t + 1];
        let x = &traj.states[t + 1];
        rho.push((xb.transpose() * k * xb)[(0, 0)] - (x.transpose() * k * x)[(0, 0)]);
    }
    Ok(RegretLedger { horizon: n, regret, chi, rho, gains: gains.clone() })
}

/// The three exact components of the regret at the trajectory's horizon,
/// plus the backward matrix ladder `K_j = D'^{n-j} K D^{n-j}` used inside
/// the noise-interaction term.
#[derive(Debug, Clone)]
pub struct DecompositionTerms {
    pub z_n: f64,
    pub s_n: f64,
    pub t_n: f64,
    pub k_ladder: Vec<DMatrix<f64>>,
}

impl DecompositionTerms {
    pub fn total(&self) -> f64 {
        self.z_n + self.s_n + self.t_n
    }
}

/// Decompose the pathwise regret of a linear-policy trajectory exactly into
/// `Z_n + S_n + T_n`:
///
/// - `T_n = sum_k ||M^{1/2} (L_k - L*) x(k)||^2`, the direct price of
///   deviating from the optimal gain;
/// - `S_n = sum_k x(k)' (D' K_{k+1} D - D_k' K_{k+1} D_k) x(k)`, the
///   closed-loop propagation difference under the cost-to-go ladder;
/// - `Z_n = sum_j w(j)' (K - K_j) xi_j`, the noise interaction, evaluated
///   through the linear recursion `xi_{j+1} = D xi_j + 2 Delta_j x(j)`
///   rather than its quadratic-cost double sum.
pub fn decompose(
    traj: &Trajectory,
    reference: &ReferenceSolution,
) -> Result<DecompositionTerms, Error> {
    let gains = traj.gains.as_ref().ok_or(Error::MissingGains)?;
    let n = traj.horizon();
    let d = &reference.closed_loop;
    let k_opt = &reference.riccati.k;
    let l_opt = &reference.riccati.gain;
    let b0 = &reference.theta0.b;
    let m_sqrt = &reference.input_weight_sqrt;
    let p = reference.theta0.state_dim();

    // Backward ladder K_n = K, K_j = D' K_{j+1} D.
    let mut k_ladder = vec![DMatrix::zeros(p, p); n + 1];
    k_ladder[n] = k_opt.clone();
    for j in (0..n).rev() {
        k_ladder[j] = d.transpose() * &k_ladder[j + 1] * d;
    }

    let mut t_n = 0.0;
    let mut s_n = 0.0;
    for t in 0..n {
        let gap = &gains[t] - l_opt;
        let x = &traj.states[t];
        t_n += (m_sqrt * (&gap * x)).norm_squared();
        let d_t = reference.theta0.closed_loop(&gains[t]);
        let k_next = &k_ladder[t + 1];
        let via_opt = d * x;
        let via_pol = &d_t * x;
        s_n += (via_opt.transpose() * k_next * &via_opt)[(0, 0)]
            - (via_pol.transpose() * k_next * &via_pol)[(0, 0)];
    }

    let mut z_n = 0.0;
    let mut xi = DVector::zeros(p);
    for j in 1..n {
        let delta_prev = b0 * ((&gains[j - 1] - l_opt) * &traj.states[j - 1]);
        xi = d * &xi + delta_prev * 2.0;
        let w_j = &traj.noises[j - 1]; // noises[t] holds w(t+1)
        z_n += (w_j.transpose() * (k_opt - &k_ladder[j]) * &xi)[(0, 0)];
    }

    Ok(DecompositionTerms { z_n, s_n, t_n, k_ladder })
}

/// Relative gap of the decomposition identity for a coupled pair.
pub fn identity_gap(ledger: &RegretLedger, terms: &DecompositionTerms) -> f64 {
    let r = ledger.final_regret();
    (r - terms.total()).abs() / (1.0 + r.abs())
}

/// One row of the normalized rate table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint {
    pub n: usize,
    pub regret: f64,
    pub chi: f64,
    pub rho: f64,
    /// `R(n) / (n^{1/2} log n)`.
    pub norm_regret: f64,
    /// `err(n) * n^{1/4} / log^{1/2} n`.
    pub norm_error: f64,
    /// `R(n) / log^2 n` (the side-information rate).
    pub gce_norm_regret: f64,
    /// `n * err(n)^2 / log n` (the side-information estimation rate).
    pub gce_norm_error: f64,
}

/// Evaluate the normalized curves at the requested horizons (each at least
/// 2, clamped to the ledger's horizon). `error_series[n]` is the estimation
/// error in force at time `n`.
pub fn normalized_curves(
    ledger: &RegretLedger,
    error_series: &[f64],
    sample_points: &[usize],
) -> Vec<NormalizedPoint> {
    let mut out = Vec::with_capacity(sample_points.len());
    for &raw_n in sample_points {
        let n = raw_n.min(ledger.horizon);
        if n < 2 {
            continue;
        }
        let nf = n as f64;
        let log_n = nf.ln();
        let r = ledger.regret[n];
        let err = error_series.get(n).copied().unwrap_or(f64::NAN);
        out.push(NormalizedPoint {
            n,
            regret: r,
            chi: ledger.chi[n],
            rho: ledger.rho[n],
            norm_regret: r / (nf.sqrt() * log_n),
            norm_error: err * nf.powf(0.25) / log_n.sqrt(),
            gce_norm_regret: r / (log_n * log_n),
            gce_norm_error: nf * err * err / log_n,
        });
    }
    out
}

/// Log-spaced integer grid between `n_min` and `n_max` (inclusive),
/// deduplicated.
pub fn log_spaced(n_min: usize, n_max: usize, per_decade: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if n_min == 0 || n_max < n_min || per_decade == 0 {
        return out;
    }
    let lo = (n_min as f64).log10();
    let hi = (n_max as f64).log10();
    let steps = ((hi - lo) * per_decade as f64).ceil() as usize;
    for k in 0..=steps {
        let v = 10f64.powf(lo + (hi - lo) * k as f64 / steps.max(1) as f64);
        let n = v.round() as usize;
        let n = n.clamp(n_min, n_max);
        if out.last() != Some(&n) {
            out.push(n);
        }
    }
    out
}

/// The boundedness statistic used for the rate claims: the curve shows no
/// upward trend when its maximum over the last decade of horizons is at
/// most three times its maximum over the middle decade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendCheck {
    pub mid_max: f64,
    pub last_max: f64,
    pub ok: bool,
}

pub fn no_upward_trend(points: &[(usize, f64)], n_max: usize) -> TrendCheck {
    let mid_lo = n_max / 100;
    let mid_hi = n_max / 10;
    let mut mid_max = 0.0_f64;
    let mut last_max = 0.0_f64;
    for &(n, v) in points {
        let mag = v.abs();
        if n > mid_lo && n <= mid_hi {
            mid_max = mid_max.max(mag);
        } else if n > mid_hi && n <= n_max {
            last_max = last_max.max(mag);
        }
    }
    TrendCheck { mid_max, last_max, ok: last_max <= 3.0 * mid_max + 1e-12 }
}

/// Centered cumulative cost of the optimal regulator, normalized by
/// `n^{1/2} log n`: the fluctuation series
/// `f_n = (sum_{t<n} c_t - n tr(KC)) / (n^{1/2} log n)` for `n >= 2`.
pub fn optimal_cost_fluctuation(
    opt_traj: &Trajectory,
    reference: &ReferenceSolution,
    noise_cov: &DMatrix<f64>,
) -> Vec<(usize, f64)> {
    let target = reference.optimal_average_cost(noise_cov);
    let cum = opt_traj.cumulative_costs();
    let mut out = Vec::new();
    for n in 2..=opt_traj.horizon() {
        let nf = n as f64;
        let f = (cum[n - 1] - nf * target) / (nf.sqrt() * nf.ln());
        out.push((n, f));
    }
    out
}
