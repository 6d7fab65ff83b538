//! Closed-loop least-squares identification of the dynamics parameter,
//! empirical covariance accumulation, and the exponential episode schedule
//! shared by all adaptive policies.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::geometry::{AffineSubspace, SideInformation};
use crate::linalg;
use crate::system::DynamicsParameter;

/// Ridge added to the Gram matrix by the adaptive policies' internal
/// estimates, covering the early episodes where samples are scarcer than
/// regressor dimensions.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Condition number beyond which an unridged Gram matrix is treated as
/// singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Unridged solve against a numerically singular Gram matrix
    /// (insufficient excitation).
    SingularGram,
    /// Constrained solve over a constraint family with no exact algorithm
    /// (sparsity or rank budgets).
    UnsupportedConstraint,
    /// The episode rate must exceed 1.
    BadRate(f64),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::SingularGram => write!(f, "gram matrix is numerically singular"),
            Error::UnsupportedConstraint => {
                write!(f, "no exact solver for this constraint family; only membership tests")
            }
            Error::BadRate(g) => write!(f, "episode rate must be > 1, got {g}"),
        }
    }
}

impl std::error::Error for Error {}

/// Exponential episode schedule with update times `floor(gamma^m)`,
/// deduplicated into a strictly increasing sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSchedule {
    gamma: f64,
}

impl EpisodeSchedule {
    pub fn new(gamma: f64) -> Result<Self, Error> {
        if !gamma.is_finite() || gamma <= 1.0 {
            return Err(Error::BadRate(gamma));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Strictly increasing update times `floor(gamma^m) <= n_max`.
    pub fn boundaries_up_to(&self, n_max: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut m = 0u32;
        loop {
            let val = self.gamma.powi(m as i32);
            if !val.is_finite() || val > n_max as f64 + 1.0 {
                break;
            }
            let b = val.floor() as usize;
            if b > n_max {
                break;
            }
            if out.last() != Some(&b) {
                out.push(b);
            }
            m += 1;
        }
        out
    }

    /// Episode index holding time `n` (the number of completed update times
    /// before or at `n`, minus one, clamped at zero) and whether `n` is an
    /// update time itself.
    pub fn episode_index(&self, n: usize) -> (usize, bool) {
        let boundaries = self.boundaries_up_to(n);
        match boundaries.last() {
            None => (0, false),
            Some(&last) => (boundaries.len() - 1, last == n),
        }
    }
}

/// Sufficient statistics of the closed-loop regression: Gram matrix of the
/// stacked regressors `z(t) = [x(t); u(t)]`, the cross moment with the next
/// state, and the sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorAccumulator {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    count: usize,
}

impl RegressorAccumulator {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        let q = state_dim + input_dim;
        Self { gram: DMatrix::zeros(q, q), cross: DMatrix::zeros(state_dim, q), count: 0 }
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn state_dim(&self) -> usize {
        self.cross.nrows()
    }

    fn input_dim(&self) -> usize {
        self.gram.nrows() - self.cross.nrows()
    }

    /// Fold one transition into the statistics.
    pub fn accumulate(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) {
        debug_assert_eq!(x.len(), self.state_dim());
        debug_assert_eq!(u.len(), self.input_dim());
        debug_assert_eq!(x_next.len(), self.state_dim());
        let q = self.gram.nrows();
        let z = DVector::from_fn(q, |i, _| if i < x.len() { x[i] } else { u[i - x.len()] });
        self.gram += &z * z.transpose();
        self.cross += x_next * z.transpose();
        self.count += 1;
    }

    /// Smallest eigenvalue of the Gram matrix (excitation diagnostic).
    pub fn min_gram_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(linalg::sym_part(&self.gram))
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// A point estimate of the dynamics parameter. `error_to_truth` is a
/// diagnostic filled in by the harness (policies never see the truth).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub theta: DynamicsParameter,
    pub error_to_truth: Option<f64>,
}

/// Ridge-regularized least squares on the accumulated statistics:
/// `theta = cross (gram + ridge I)^{-1}`.
pub fn least_squares(acc: &RegressorAccumulator, ridge: f64) -> Result<Estimate, Error> {
    let q = acc.gram.nrows();
    if ridge == 0.0 && linalg::condition_number(&acc.gram) > SINGULAR_CONDITION {
        return Err(Error::SingularGram);
    }
    let reg = &acc.gram + DMatrix::identity(q, q) * ridge;
    let chol = Cholesky::new(linalg::sym_part(&reg)).ok_or(Error::SingularGram)?;
    let theta_t = chol.solve(&acc.cross.transpose());
    let theta = DynamicsParameter::from_matrix(&theta_t.transpose(), acc.input_dim())
        .map_err(|_| Error::SingularGram)?;
    Ok(Estimate { theta, error_to_truth: None })
}

/// Exact minimizer of the regression objective over an affine constraint
/// set: known-support patterns are solved row-wise over the unmasked
/// columns, affine subspaces through the normal equations restricted to the
/// orthonormal basis. Budget constraints have no exact solver.
pub fn constrained_least_squares(
    acc: &RegressorAccumulator,
    side: &SideInformation,
    ridge: f64,
) -> Result<Estimate, Error> {
    match side {
        SideInformation::Support(pattern) => {
            let p = acc.state_dim();
            let q = acc.gram.nrows();
            if ridge == 0.0 && linalg::condition_number(&acc.gram) > SINGULAR_CONDITION {
                return Err(Error::SingularGram);
            }
            let mut theta = DMatrix::zeros(p, q);
            for i in 0..p {
                let cols: Vec<usize> = (0..q).filter(|&j| pattern.allows(i, j)).collect();
                if cols.is_empty() {
                    continue;
                }
                let k = cols.len();
                let mut sub = DMatrix::zeros(k, k);
                let mut rhs = DVector::zeros(k);
                for (a, &ja) in cols.iter().enumerate() {
                    rhs[a] = acc.cross[(i, ja)];
                    for (b, &jb) in cols.iter().enumerate() {
                        sub[(a, b)] = acc.gram[(ja, jb)] + if a == b { ridge } else { 0.0 };
                    }
                }
                let chol = Cholesky::new(linalg::sym_part(&sub)).ok_or(Error::SingularGram)?;
                let coef = chol.solve(&rhs);
                for (a, &ja) in cols.iter().enumerate() {
                    theta[(i, ja)] = coef[a];
                }
            }
            let theta = DynamicsParameter::from_matrix(&theta, acc.input_dim())
                .map_err(|_| Error::SingularGram)?;
            Ok(Estimate { theta, error_to_truth: None })
        }
        SideInformation::Subspace(aff) => {
            let est = subspace_least_squares(acc, aff, ridge)?;
            Ok(Estimate { theta: est, error_to_truth: None })
        }
        SideInformation::SparsityBudget(_) | SideInformation::RankBudget(_) => {
            Err(Error::UnsupportedConstraint)
        }
    }
}

fn subspace_least_squares(
    acc: &RegressorAccumulator,
    aff: &AffineSubspace,
    ridge: f64,
) -> Result<DynamicsParameter, Error> {
    let q = acc.gram.nrows();
    let reg = &acc.gram + DMatrix::identity(q, q) * ridge;
    let dim = aff.basis.len();
    if dim == 0 {
        return DynamicsParameter::from_matrix(&aff.base, acc.input_dim())
            .map_err(|_| Error::SingularGram);
    }
    // Quadratic objective in the basis coefficients c:
    //   f(base + sum_a c_a V_a) with gradient
    //   tr(V_a G theta') = tr(V_a cross')  for all a.
    let mut m = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let images: Vec<DMatrix<f64>> = aff.basis.iter().map(|v| v * &reg).collect();
    for a in 0..dim {
        rhs[a] = linalg::trace_inner(&aff.basis[a], &acc.cross)
            - linalg::trace_inner(&images[a], &aff.base);
        for b in a..dim {
            let val = linalg::trace_inner(&images[a], &aff.basis[b]);
            m[(a, b)] = val;
            m[(b, a)] = val;
        }
    }
    let chol = Cholesky::new(linalg::sym_part(&m)).ok_or(Error::SingularGram)?;
    let coef = chol.solve(&rhs);
    let mut theta = aff.base.clone();
    for a in 0..dim {
        theta += &aff.basis[a] * coef[a];
    }
    DynamicsParameter::from_matrix(&theta, acc.input_dim()).map_err(|_| Error::SingularGram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SupportPattern;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn random_theta(rng: &mut ChaCha12Rng, p: usize, r: usize) -> DynamicsParameter {
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.4);
        let b = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        DynamicsParameter::new(a, b).unwrap()
    }

    fn synthesize(
        rng: &mut ChaCha12Rng,
        theta: &DynamicsParameter,
        samples: usize,
    ) -> RegressorAccumulator {
        let p = theta.state_dim();
        let r = theta.input_dim();
        let mut acc = RegressorAccumulator::new(p, r);
        for _ in 0..samples {
            let x = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x_next = &theta.a * &x + &theta.b * &u;
            acc.accumulate(&x, &u, &x_next);
        }
        acc
    }

    #[test]
    fn schedule_boundaries_dedup_against_enumeration() {
        let sched = EpisodeSchedule::new(1.2).unwrap();
        // Oracle: enumerate floor(1.2^m) for m = 0..50 and deduplicate.
        let mut oracle = Vec::new();
        for m in 0..50 {
            let b = 1.2_f64.powi(m).floor() as usize;
            if b <= 100 && oracle.last() != Some(&b) {
                oracle.push(b);
            }
        }
        assert_eq!(sched.boundaries_up_to(100), oracle);
        assert_eq!(oracle[0], 1, "floor(1.2^0..3) collapse to a single boundary at 1");
    }

    #[test]
    fn schedule_episode_index_examples() {
        let two = EpisodeSchedule::new(2.0).unwrap();
        assert_eq!(two.episode_index(4), (2, true));
        assert_eq!(two.episode_index(5), (2, false));
        assert_eq!(two.episode_index(0), (0, false));
        let slow = EpisodeSchedule::new(1.2).unwrap();
        assert_eq!(slow.episode_index(1), (0, true));
    }

    #[test]
    fn schedule_rejects_rate_at_most_one() {
        assert!(matches!(EpisodeSchedule::new(1.0), Err(Error::BadRate(_))));
        assert!(matches!(EpisodeSchedule::new(0.5), Err(Error::BadRate(_))));
    }

    #[test]
    fn accumulate_single_sample_is_outer_product() {
        let mut acc = RegressorAccumulator::new(2, 1);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let u = DVector::from_vec(vec![3.0]);
        let x_next = DVector::from_vec(vec![4.0, 5.0]);
        acc.accumulate(&x, &u, &x_next);
        let z = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(acc.gram(), &(&z * z.transpose()));
        assert_eq!(acc.cross(), &(&x_next * z.transpose()));
        assert_eq!(acc.count(), 1);
    }

    #[test]
    fn accumulate_is_linear_in_repeats() {
        let mut acc = RegressorAccumulator::new(2, 1);
        let x = DVector::from_vec(vec![0.5, -1.0]);
        let u = DVector::from_vec(vec![2.0]);
        let x_next = DVector::from_vec(vec![1.0, 0.0]);
        for _ in 0..7 {
            acc.accumulate(&x, &u, &x_next);
        }
        let z = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert!((acc.gram() - (&z * z.transpose()) * 7.0).norm() < 1e-12);
        assert_eq!(acc.count(), 7);
    }

    #[test]
    fn accumulate_order_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let samples: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = (0..5)
            .map(|_| {
                (
                    DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal)),
                    DVector::from_fn(1, |_, _| rng.sample::<f64, _>(StandardNormal)),
                    DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal)),
                )
            })
            .collect();
        // Brute-force a handful of permutations of the sample set.
        let perms: Vec<Vec<usize>> = vec![
            vec![0, 1, 2, 3, 4],
            vec![4, 3, 2, 1, 0],
            vec![2, 0, 4, 1, 3],
            vec![1, 4, 0, 3, 2],
        ];
        let mut grams = Vec::new();
        for perm in perms {
            let mut acc = RegressorAccumulator::new(2, 1);
            for &i in &perm {
                acc.accumulate(&samples[i].0, &samples[i].1, &samples[i].2);
            }
            grams.push((acc.gram().clone(), acc.cross().clone()));
        }
        for (g, c) in &grams[1..] {
            assert!((g - &grams[0].0).norm() <= 1e-12 * (1.0 + grams[0].0.norm()));
            assert!((c - &grams[0].1).norm() <= 1e-12 * (1.0 + grams[0].1.norm()));
        }
    }

    #[test]
    fn least_squares_recovers_noiseless_theta() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let theta = random_theta(&mut rng, 3, 2);
        let acc = synthesize(&mut rng, &theta, 2 * theta.combined_dim());
        let est = least_squares(&acc, 0.0).unwrap();
        let err = crate::linalg::op_norm(&(est.theta.as_matrix() - theta.as_matrix()));
        assert!(err < 1e-8, "recovery error {err:e}");
    }

    #[test]
    fn least_squares_normal_equation_residual() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let theta = random_theta(&mut rng, 3, 2);
        let acc = synthesize(&mut rng, &theta, 40);
        for ridge in [0.0, 1e-8, 0.1] {
            let est = least_squares(&acc, ridge).unwrap();
            let q = acc.gram().nrows();
            let reg = acc.gram() + DMatrix::identity(q, q) * ridge;
            let resid = est.theta.as_matrix() * reg - acc.cross();
            assert!(resid.norm() <= 1e-9 * (1.0 + acc.cross().norm()));
        }
    }

    #[test]
    fn least_squares_single_sample_with_ridge_is_defined() {
        let mut acc = RegressorAccumulator::new(2, 1);
        acc.accumulate(
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![0.5, 0.5]),
        );
        let est = least_squares(&acc, 1e-8).unwrap();
        assert!(est.theta.as_matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn least_squares_flags_singular_gram() {
        let mut acc = RegressorAccumulator::new(2, 1);
        acc.accumulate(
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![0.5, 0.5]),
        );
        assert!(matches!(least_squares(&acc, 0.0), Err(Error::SingularGram)));
    }

    #[test]
    fn gram_min_eigenvalue_is_nondecreasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let theta = random_theta(&mut rng, 2, 1);
        let mut acc = RegressorAccumulator::new(2, 1);
        let mut last = 0.0;
        for _ in 0..20 {
            let x = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = DVector::from_fn(1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x_next = &theta.a * &x + &theta.b * &u;
            acc.accumulate(&x, &u, &x_next);
            let cur = acc.min_gram_eigenvalue();
            assert!(cur >= last - 1e-10, "gram eigenvalue decreased: {cur} < {last}");
            last = cur;
        }
    }

    #[test]
    fn closed_loop_error_shrinks_with_horizon_under_dither() {
        // Optimal gain plus a small input dither; the operator-norm error of
        // the least-squares estimate decreases from n = 10^3 to n = 10^4.
        use crate::policies::Policy;
        use crate::system::{presets, simulate, NoiseKind, NoiseModel};

        // The dither enters through a per-step gain wiggle so the regressor
        // covers all q directions.
        struct Dithered {
            gain: DMatrix<f64>,
            rng: ChaCha12Rng,
        }
        impl Policy for Dithered {
            fn feedback(&mut self, _t: usize) -> DMatrix<f64> {
                &self.gain
                    + DMatrix::from_fn(self.gain.nrows(), self.gain.ncols(), |_, _| {
                        0.1 * self.rng.sample::<f64, _>(StandardNormal)
                    })
            }
            fn observe(
                &mut self,
                _t: usize,
                _x: &DVector<f64>,
                _u: &DVector<f64>,
                _xn: &DVector<f64>,
            ) {
            }
        }

        let (theta0, cost) = presets::paper();
        let sol = theta0.riccati(&cost).unwrap();
        let model = NoiseModel::new(NoiseKind::Gaussian, DMatrix::identity(3, 3), 77);
        let noises = model.draw(10_000).unwrap();
        let mut policy = Dithered { gain: sol.gain, rng: ChaCha12Rng::seed_from_u64(5) };
        let traj = simulate(&theta0, &cost, &mut policy, &noises, &DVector::zeros(3));
        assert!(!traj.diverged);
        let mut errors = Vec::new();
        for n in [1000usize, 10_000] {
            let mut acc = RegressorAccumulator::new(3, 3);
            for t in 0..n {
                acc.accumulate(&traj.states[t], &traj.inputs[t], &traj.states[t + 1]);
            }
            let est = least_squares(&acc, 0.0).unwrap();
            errors.push(crate::linalg::op_norm(
                &(est.theta.as_matrix() - theta0.as_matrix()),
            ));
        }
        assert!(
            errors[1] < errors[0],
            "estimation error did not shrink: {errors:?}"
        );
    }

    #[test]
    fn constrained_full_support_matches_unconstrained() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let theta = random_theta(&mut rng, 3, 2);
        let acc = synthesize(&mut rng, &theta, 30);
        let full = SideInformation::Support(SupportPattern::full(3, 5));
        let constrained = constrained_least_squares(&acc, &full, 1e-10).unwrap();
        let unconstrained = least_squares(&acc, 1e-10).unwrap();
        let gap = (constrained.theta.as_matrix() - unconstrained.theta.as_matrix()).norm();
        assert!(gap < 1e-9, "gap {gap:e}");
    }

    #[test]
    fn constrained_exact_support_recovers_sparse_theta() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, -0.4, 0.2]));
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let theta = DynamicsParameter::new(a, b).unwrap();
        let acc = synthesize(&mut rng, &theta, 24);
        let pattern = SupportPattern::from_nonzeros(&theta.as_matrix(), 1e-12);
        let side = SideInformation::Support(pattern);
        let est = constrained_least_squares(&acc, &side, 0.0).unwrap();
        let err = crate::linalg::op_norm(&(est.theta.as_matrix() - theta.as_matrix()));
        assert!(err < 1e-8, "recovery error {err:e}");
        // Entries outside the support are exactly zero.
        assert_eq!(est.theta.as_matrix()[(0, 1)], 0.0);
        assert_eq!(est.theta.as_matrix()[(2, 4)], 0.0);
    }

    #[test]
    fn constrained_subspace_satisfies_constraints() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let theta = random_theta(&mut rng, 2, 2);
        let acc = synthesize(&mut rng, &theta, 30);
        // Constrain to { theta0 + d : tr(d' c_i) = 0 } for two random c_i.
        let constraints: Vec<DMatrix<f64>> = (0..2)
            .map(|_| DMatrix::from_fn(2, 4, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let aff =
            AffineSubspace::from_orthogonality_constraints(theta.as_matrix(), &constraints, 1e-10)
                .unwrap();
        let side = SideInformation::Subspace(aff);
        let est = constrained_least_squares(&acc, &side, 1e-10).unwrap();
        let delta = est.theta.as_matrix() - theta.as_matrix();
        for c in &constraints {
            assert!(crate::linalg::trace_inner(&delta, c).abs() < 1e-10);
        }
    }

    #[test]
    fn constrained_rejects_budget_constraints() {
        let acc = RegressorAccumulator::new(2, 1);
        for side in [SideInformation::SparsityBudget(3), SideInformation::RankBudget(1)] {
            assert!(matches!(
                constrained_least_squares(&acc, &side, 0.0),
                Err(Error::UnsupportedConstraint)
            ));
        }
    }
}
