//! The linear-quadratic plant: dynamics parameter, cost specification, noise
//! generation, and trajectory simulation (including noise-coupled twin
//! trajectories for regret accounting).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, RiccatiSolution};
use crate::policies::Policy;

/// States larger than this in norm mark the trajectory as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e30;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The noise covariance is not symmetric positive definite.
    BadCovariance,
    /// Inconsistent dimensions between plant, cost, policy, or data.
    Dimension(String),
    /// Malformed trajectory CSV.
    Csv(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::BadCovariance => write!(f, "noise covariance is not symmetric positive definite"),
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Csv(msg) => write!(f, "bad trajectory csv: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

/// The plant parameter `theta = [A, B]`: transition matrix `A` (p x p) and
/// input matrix `B` (p x r).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParameter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl DynamicsParameter {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, Error> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "transition matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "input matrix has {} rows, expected {}",
                b.nrows(),
                a.nrows()
            )));
        }
        if !a.iter().chain(b.iter()).all(|x| x.is_finite()) {
            return Err(Error::Dimension("non-finite entry in dynamics".into()));
        }
        Ok(Self { a, b })
    }

    /// State dimension p.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension r.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Combined regressor dimension q = p + r.
    pub fn combined_dim(&self) -> usize {
        self.state_dim() + self.input_dim()
    }

    /// The parameter as a single p x q block matrix `[A B]`.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let p = self.state_dim();
        let r = self.input_dim();
        let mut m = DMatrix::zeros(p, p + r);
        m.view_mut((0, 0), (p, p)).copy_from(&self.a);
        m.view_mut((0, p), (p, r)).copy_from(&self.b);
        m
    }

    /// Split a p x (p+r) block matrix `[A B]` back into a parameter.
    pub fn from_matrix(theta: &DMatrix<f64>, input_dim: usize) -> Result<Self, Error> {
        let p = theta.nrows();
        if theta.ncols() != p + input_dim {
            return Err(Error::Dimension(format!(
                "expected {} columns for p={p}, r={input_dim}; got {}",
                p + input_dim,
                theta.ncols()
            )));
        }
        let a = theta.view((0, 0), (p, p)).into_owned();
        let b = theta.view((0, p), (p, input_dim)).into_owned();
        Self::new(a, b)
    }

    /// Solve the Riccati equation for this parameter under the given cost.
    pub fn riccati(&self, cost: &CostSpec) -> Result<RiccatiSolution, linalg::Error> {
        linalg::solve_riccati(&self.a, &self.b, &cost.q, &cost.r)
    }

    /// Closed-loop transition matrix `A + B L` under an external gain.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * gain
    }
}

/// Quadratic stage-cost specification: symmetric positive definite `Q`, `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, linalg::Error> {
        for m in [&q, &r] {
            if m.nrows() != m.ncols()
                || (m - m.transpose()).norm() > 1e-10 * (1.0 + m.norm())
                || Cholesky::new(linalg::sym_part(m)).is_none()
            {
                return Err(linalg::Error::BadCost);
            }
        }
        Ok(Self { q, r })
    }

    /// Stage cost `x'Qx + u'Ru`.
    pub fn stage(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }
}

/// Noise distribution family. Both have zero mean, covariance `C`, and all
/// moments finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    ScaledUniform,
}

/// Seeded noise generator with covariance `C`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub covariance: DMatrix<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, covariance: DMatrix<f64>, seed: u64) -> Self {
        Self { kind, covariance, seed }
    }

    fn factor(&self) -> Result<DMatrix<f64>, Error> {
        if self.covariance.nrows() != self.covariance.ncols() {
            return Err(Error::BadCovariance);
        }
        let c = &self.covariance;
        if (c - c.transpose()).norm() > 1e-10 * (1.0 + c.norm()) {
            return Err(Error::BadCovariance);
        }
        Cholesky::new(linalg::sym_part(c))
            .map(|ch| ch.l())
            .ok_or(Error::BadCovariance)
    }

    /// Draw `horizon` noise vectors. Deterministic in the seed.
    pub fn draw(&self, horizon: usize) -> Result<Vec<DVector<f64>>, Error> {
        let l = self.factor()?;
        let p = l.nrows();
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let v = match self.kind {
                NoiseKind::Gaussian => {
                    DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))
                }
                NoiseKind::ScaledUniform => {
                    // Uniform on [-sqrt(3), sqrt(3)): unit variance per coordinate.
                    DVector::from_fn(p, |_, _| (rng.random::<f64>() - 0.5) * 2.0 * 3.0_f64.sqrt())
                }
            };
            out.push(&l * v);
        }
        Ok(out)
    }
}

/// One simulated path: states `x(0..=n)`, inputs `u(0..n)`, noises
/// `w(1..=n)`, stage costs, and the per-step gains when the driving policy
/// was linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub noises: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
    pub gains: Option<Vec<DMatrix<f64>>>,
    pub diverged: bool,
}

impl Trajectory {
    /// Number of simulated steps (length of the input/cost/noise sequences).
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// The first `n` steps as a standalone trajectory.
    pub fn truncated(&self, n: usize) -> Trajectory {
        let n = n.min(self.horizon());
        Trajectory {
            states: self.states[..=n].to_vec(),
            inputs: self.inputs[..n].to_vec(),
            noises: self.noises[..n].to_vec(),
            costs: self.costs[..n].to_vec(),
            gains: self.gains.as_ref().map(|g| g[..n].to_vec()),
            diverged: false,
        }
    }

    /// Running prefix sums of the stage costs (`sum_{t<n} c_t` at index n-1).
    pub fn cumulative_costs(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.costs
            .iter()
            .map(|c| {
                acc += c;
                acc
            })
            .collect()
    }

    /// Largest per-step residual of `x(t+1) = A x(t) + B u(t) + w(t+1)`.
    pub fn max_reconstruction_residual(&self, theta0: &DynamicsParameter) -> f64 {
        let mut worst = 0.0_f64;
        for t in 0..self.horizon() {
            let pred = &theta0.a * &self.states[t] + &theta0.b * &self.inputs[t] + &self.noises[t];
            worst = worst.max((&self.states[t + 1] - pred).norm());
        }
        worst
    }

    /// Serialize as CSV with the mandatory header
    /// `t,x_1..x_p,u_1..u_r,cost`; one row per simulated step.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = self.states.first().map_or(0, |x| x.len());
        let r = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=p).map(|i| format!("x_{i}")));
        header.extend((1..=r).map(|i| format!("u_{i}")));
        header.push("cost".to_string());
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.horizon() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|v| format!("{v}")));
            row.extend(self.inputs[t].iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.costs[t]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Parse a trajectory CSV produced by [`Trajectory::write_csv`] and
    /// reconstruct the noise sequence from the given true dynamics. The
    /// resulting trajectory carries no gain record.
    pub fn read_csv<R: std::io::BufRead>(
        reader: R,
        theta0: &DynamicsParameter,
    ) -> Result<Trajectory, Error> {
        let p = theta0.state_dim();
        let r = theta0.input_dim();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut costs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Csv(e.to_string()))?;
            if i == 0 {
                continue; // header
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + p + r {
                return Err(Error::Csv(format!(
                    "row {i}: expected {} fields, got {}",
                    2 + p + r,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("row {i}: {e}")))
            };
            let x = DVector::from_iterator(
                p,
                fields[1..1 + p].iter().map(|s| parse(s)).collect::<Result<Vec<_>, _>>()?,
            );
            let u = DVector::from_iterator(
                r,
                fields[1 + p..1 + p + r]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            states.push(x);
            inputs.push(u);
            costs.push(parse(fields[1 + p + r])?);
        }
        if states.len() < 2 {
            return Err(Error::Csv("need at least two rows to recover a transition".into()));
        }
        // The final recorded state has no input row beyond it; treat the last
        // row's state as x(n) and drop its input/cost.
        inputs.pop();
        costs.pop();
        let noises: Vec<DVector<f64>> = (0..inputs.len())
            .map(|t| &states[t + 1] - &theta0.a * &states[t] - &theta0.b * &inputs[t])
            .collect();
        Ok(Trajectory { states, inputs, noises, costs, gains: None, diverged: false })
    }
}

/// Simulate the plant under a policy for the length of the supplied noise
/// sequence. If the state norm exceeds [`DIVERGENCE_THRESHOLD`] the
/// trajectory is cut short and flagged.
pub fn simulate<P: Policy + ?Sized>(
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    policy: &mut P,
    noises: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Trajectory {
    let horizon = noises.len();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut used_noises = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon);
    let mut gains = Vec::with_capacity(horizon);
    let mut diverged = false;

    let mut x = x0.clone();
    states.push(x.clone());
    for (t, w) in noises.iter().enumerate() {
        let gain = policy.feedback(t);
        let u = &gain * &x;
        let x_next = &theta0.a * &x + &theta0.b * &u + w;
        costs.push(cost.stage(&x, &u));
        policy.observe(t, &x, &u, &x_next);
        inputs.push(u);
        used_noises.push(w.clone());
        gains.push(gain);
        states.push(x_next.clone());
        if x_next.norm() > DIVERGENCE_THRESHOLD {
            diverged = true;
            break;
        }
        x = x_next;
    }
    Trajectory { states, inputs, noises: used_noises, costs, gains: Some(gains), diverged }
}

/// Simulate a policy and the optimal regulator on the identical noise
/// realization and initial state, as the regret definition requires.
pub fn simulate_coupled<P: Policy + ?Sized, O: Policy + ?Sized>(
    theta0: &DynamicsParameter,
    cost: &CostSpec,
    policy: &mut P,
    optimal: &mut O,
    noises: &[DVector<f64>],
    x0: &DVector<f64>,
) -> (Trajectory, Trajectory) {
    let traj = simulate(theta0, cost, policy, noises, x0);
    let opt_traj = simulate(theta0, cost, optimal, noises, x0);
    (traj, opt_traj)
}

/// Bundled benchmark systems.
pub mod presets {
    use super::{CostSpec, DynamicsParameter};
    use nalgebra::DMatrix;

    /// The 3-state, 3-input benchmark system used throughout the experiment
    /// suite ("paper" preset in experiment configs).
    pub fn paper() -> (DynamicsParameter, CostSpec) {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[1.04, 0.0, -0.27, 0.52, -0.81, 0.83, 0.0, 0.04, -0.90],
        );
        let b = DMatrix::from_row_slice(
            3,
            3,
            &[-0.47, 0.61, -0.29, -0.50, 0.58, 0.25, 0.29, 0.0, -0.72],
        );
        let q = DMatrix::from_row_slice(
            3,
            3,
            &[0.65, -0.08, -0.14, -0.08, 0.57, 0.26, -0.14, 0.26, 2.50],
        );
        let r = DMatrix::from_row_slice(
            3,
            3,
            &[0.20, 0.05, 0.08, 0.05, 0.14, 0.04, 0.08, 0.04, 0.24],
        );
        (
            DynamicsParameter::new(a, b).expect("preset dimensions are consistent"),
            CostSpec::new(q, r).expect("preset cost matrices are positive definite"),
        )
    }

    /// Sparse diagonal plant with full-rank transition, paired with dense
    /// cost matrices. The dense cost makes the optimal gain dense, so no
    /// diagonal-supported direction is invisible to closed-loop
    /// identification: support side information on the diagonal is
    /// identifiable.
    pub fn sparse_diagonal() -> (DynamicsParameter, CostSpec) {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.9, 0.5, -0.6]));
        let b = DMatrix::identity(3, 3);
        let q = DMatrix::from_row_slice(
            3,
            3,
            &[0.65, -0.08, -0.14, -0.08, 0.57, 0.26, -0.14, 0.26, 2.50],
        );
        let r = DMatrix::from_row_slice(
            3,
            3,
            &[0.20, 0.05, 0.08, 0.05, 0.14, 0.04, 0.08, 0.04, 0.24],
        );
        (
            DynamicsParameter::new(a, b).expect("preset dimensions are consistent"),
            CostSpec::new(q, r).expect("preset cost matrices are positive definite"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{FixedGainPolicy, OptimalPolicy};
    use approx::assert_relative_eq;

    #[test]
    fn noise_same_seed_identical() {
        let c = DMatrix::identity(3, 3);
        let model = NoiseModel::new(NoiseKind::Gaussian, c, 42);
        let a = model.draw(100).unwrap();
        let b = model.draw(100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_sample_covariance_close_to_target() {
        let c = DMatrix::identity(3, 3) * 1e-4;
        for kind in [NoiseKind::Gaussian, NoiseKind::ScaledUniform] {
            let model = NoiseModel::new(kind, c.clone(), 7);
            let draws = model.draw(100_000).unwrap();
            let n = draws.len() as f64;
            let mut cov = DMatrix::zeros(3, 3);
            let mut mean = DVector::zeros(3);
            for w in &draws {
                cov += w * w.transpose();
                mean += w;
            }
            cov /= n;
            mean /= n;
            let err = crate::linalg::op_norm(&(&cov - &c));
            assert!(
                err <= 0.05 * crate::linalg::op_norm(&c),
                "{kind:?}: covariance error {err:e}"
            );
            assert!(mean.norm() < 3.0 * (1e-4_f64 / 1e5).sqrt() * 3.0);
        }
    }

    #[test]
    fn noise_scaled_uniform_is_bounded() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let model = NoiseModel::new(NoiseKind::ScaledUniform, c.clone(), 3);
        let l = Cholesky::new(c).unwrap().l();
        let bound: Vec<f64> = (0..2)
            .map(|i| 3.0_f64.sqrt() * l.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .collect();
        for w in model.draw(10_000).unwrap() {
            for i in 0..2 {
                assert!(w[i].abs() <= bound[i] + 1e-12);
            }
        }
    }

    #[test]
    fn noise_rejects_bad_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // indefinite
        let model = NoiseModel::new(NoiseKind::Gaussian, c, 0);
        assert!(matches!(model.draw(1), Err(Error::BadCovariance)));
    }

    #[test]
    fn simulate_zero_noise_zero_start_stays_zero() {
        let (theta, cost) = presets::paper();
        let sol = theta.riccati(&cost).unwrap();
        let mut policy = FixedGainPolicy::new(sol.gain);
        let noises = vec![DVector::zeros(3); 50];
        let traj = simulate(&theta, &cost, &mut policy, &noises, &DVector::zeros(3));
        assert!(!traj.diverged);
        assert!(traj.states.iter().all(|x| x.norm() == 0.0));
        assert!(traj.inputs.iter().all(|u| u.norm() == 0.0));
        assert!(traj.costs.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn simulate_reconstruction_residual_is_tiny() {
        let (theta, cost) = presets::paper();
        let mut policy = OptimalPolicy::new(&theta, &cost).unwrap();
        let model = NoiseModel::new(NoiseKind::Gaussian, DMatrix::identity(3, 3), 11);
        let noises = model.draw(500).unwrap();
        let traj = simulate(&theta, &cost, &mut policy, &noises, &DVector::zeros(3));
        assert!(traj.max_reconstruction_residual(&theta) <= 1e-12);
        assert!(traj.costs.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn simulate_flags_divergence() {
        let a = DMatrix::identity(3, 3) * 1.5;
        let b = DMatrix::identity(3, 3);
        let theta = DynamicsParameter::new(a, b).unwrap();
        let cost = CostSpec::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
        let mut policy = FixedGainPolicy::new(DMatrix::zeros(3, 3));
        let noises = vec![DVector::zeros(3); 500];
        let x0 = DVector::from_element(3, 1.0);
        let traj = simulate(&theta, &cost, &mut policy, &noises, &x0);
        assert!(traj.diverged);
        // Brute-force the blow-up point: ||x(t)|| = 1.5^t * sqrt(3).
        let expected_steps = (DIVERGENCE_THRESHOLD / 3.0_f64.sqrt()).ln() / 1.5_f64.ln();
        assert!((traj.horizon() as f64 - expected_steps).abs() <= 2.0);
    }

    #[test]
    fn coupled_trajectories_share_noise_bitwise() {
        let (theta, cost) = presets::paper();
        let sol = theta.riccati(&cost).unwrap();
        let mut policy = FixedGainPolicy::new(&sol.gain * 0.8);
        let mut optimal = OptimalPolicy::new(&theta, &cost).unwrap();
        let model = NoiseModel::new(NoiseKind::Gaussian, DMatrix::identity(3, 3), 5);
        let noises = model.draw(200).unwrap();
        let (a, b) = simulate_coupled(&theta, &cost, &mut policy, &mut optimal, &noises, &DVector::zeros(3));
        assert_eq!(a.noises, b.noises);
        assert_eq!(a.states[0], b.states[0]);
    }

    #[test]
    fn coupled_identical_policy_zero_regret() {
        let (theta, cost) = presets::paper();
        let mut p1 = OptimalPolicy::new(&theta, &cost).unwrap();
        let mut p2 = OptimalPolicy::new(&theta, &cost).unwrap();
        let model = NoiseModel::new(NoiseKind::Gaussian, DMatrix::identity(3, 3), 9);
        let noises = model.draw(300).unwrap();
        let (a, b) = simulate_coupled(&theta, &cost, &mut p1, &mut p2, &noises, &DVector::zeros(3));
        let regret: f64 = a.costs.iter().zip(&b.costs).map(|(x, y)| x - y).sum();
        assert_eq!(regret, 0.0);
    }

    #[test]
    fn average_cost_converges_to_optimal_trace() {
        let (theta, cost) = presets::paper();
        let sol = theta.riccati(&cost).unwrap();
        let c = DMatrix::identity(3, 3);
        let target = (&sol.k * &c).trace();
        let mut ratios = Vec::new();
        let mut worst_avg_state = 0.0_f64;
        for seed in 0..10 {
            let mut policy = OptimalPolicy::new(&theta, &cost).unwrap();
            let model = NoiseModel::new(NoiseKind::Gaussian, c.clone(), 1000 + seed);
            let noises = model.draw(100_000).unwrap();
            let traj = simulate(&theta, &cost, &mut policy, &noises, &DVector::zeros(3));
            let avg = traj.costs.iter().sum::<f64>() / traj.costs.len() as f64;
            ratios.push(avg / target);
            // Stability in the average sense: (1/n) sum ||x(t)||^2 bounded.
            let avg_state = traj.states.iter().map(|x| x.norm_squared()).sum::<f64>()
                / traj.states.len() as f64;
            worst_avg_state = worst_avg_state.max(avg_state);
        }
        let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(
            (mean_ratio - 1.0).abs() < 0.05,
            "average cost off by {:.3}%",
            100.0 * (mean_ratio - 1.0)
        );
        assert!(worst_avg_state.is_finite() && worst_avg_state < 100.0 * target);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let (theta, cost) = presets::paper();
        let mut policy = OptimalPolicy::new(&theta, &cost).unwrap();
        let model = NoiseModel::new(NoiseKind::Gaussian, DMatrix::identity(3, 3), 21);
        let noises = model.draw(40).unwrap();
        let traj = simulate(&theta, &cost, &mut policy, &noises, &DVector::zeros(3));
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x_1,x_2,x_3,u_1,u_2,u_3,cost\n"));
        let parsed = Trajectory::read_csv(std::io::BufReader::new(&buf[..]), &theta).unwrap();
        // One transition fewer: the last CSV row has no successor state.
        assert_eq!(parsed.horizon(), traj.horizon() - 1);
        for t in 0..parsed.horizon() {
            assert_relative_eq!(
                (&parsed.noises[t] - &traj.noises[t]).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
        assert!(parsed.gains.is_none());
    }
}
