//! Payoff-based learner: Gaussian mixed strategies with projected mean updates.
//!
//! Each player `i` draws a state `x_i ~ N(mu_i, sigma^2 I)`, observes only its
//! own cost `J_i(x)` and moves its mean along the score direction:
//!
//! ```text
//! mu_i <- Proj_{A_i}[ mu_i - gamma(t+1) sigma(t+1)^2 * J_i(x) * (x_i - mu_i) / sigma(t)^2 ]
//! ```
//!
//! Schedules are power laws indexed from 1. The update producing `mu(t+1)`
//! from `mu(t)` (t counted from 0) samples with `sigma(t + 1)` and steps with
//! `gamma(t + 2) sigma(t + 2)^2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::PayoffOracle;
use crate::joint::JointVector;
use crate::projection::{ActionSet, ProductSet};

/// Slack used when comparing exponent sums against 1.
const EXPONENT_SLACK: f64 = 1e-12;

/// `gamma(t) = gamma_c / t^gamma_a`, `sigma(t) = sigma_c / t^sigma_a`, `t >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub gamma_c: f64,
    pub gamma_a: f64,
    pub sigma_c: f64,
    pub sigma_a: f64,
}

impl ScheduleSpec {
    pub fn new(gamma_c: f64, gamma_a: f64, sigma_c: f64, sigma_a: f64) -> Self {
        Self {
            gamma_c,
            gamma_a,
            sigma_c,
            sigma_a,
        }
    }

    /// `gamma(t) = 1 / t^0.51`, `sigma(t) = 0.1 / t^0.2`.
    pub fn case_study() -> Self {
        Self::new(1.0, 0.51, 0.1, 0.2)
    }

    pub fn gamma(&self, t: u64) -> f64 {
        self.gamma_c / (t.max(1) as f64).powf(self.gamma_a)
    }

    pub fn sigma(&self, t: u64) -> f64 {
        self.sigma_c / (t.max(1) as f64).powf(self.sigma_a)
    }

    /// Effective step `beta(t) = gamma(t) sigma(t)^2`.
    pub fn beta(&self, t: u64) -> f64 {
        let s = self.sigma(t);
        self.gamma(t) * s * s
    }
}

/// The three summability conditions on the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleCondition {
    /// `sum gamma sigma^2 = inf`
    StepSumDiverges,
    /// `sum gamma sigma^3 < inf`
    BiasSumFinite,
    /// `sum gamma^2 < inf`
    SquaredStepSumFinite,
}

impl ScheduleCondition {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleCondition::StepSumDiverges => "sum gamma*sigma^2 = inf",
            ScheduleCondition::BiasSumFinite => "sum gamma*sigma^3 < inf",
            ScheduleCondition::SquaredStepSumFinite => "sum gamma^2 < inf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValidation {
    pub valid: bool,
    pub violated: Vec<ScheduleCondition>,
}

/// p-series tests on the exponents: `sum t^-p` converges iff `p > 1`.
pub fn validate_schedule(s: &ScheduleSpec) -> Result<ScheduleValidation> {
    let fields = [s.gamma_c, s.gamma_a, s.sigma_c, s.sigma_a];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(Error::UnsupportedSchedule("non-finite coefficient or exponent".into()));
    }
    if s.gamma_c <= 0.0 || s.sigma_c <= 0.0 {
        return Err(Error::UnsupportedSchedule("coefficients must be positive".into()));
    }
    if s.gamma_a < 0.0 || s.sigma_a < 0.0 {
        return Err(Error::UnsupportedSchedule("exponents must be non-negative".into()));
    }
    let mut violated = Vec::new();
    if s.gamma_a + 2.0 * s.sigma_a > 1.0 + EXPONENT_SLACK {
        violated.push(ScheduleCondition::StepSumDiverges);
    }
    if s.gamma_a + 3.0 * s.sigma_a <= 1.0 + EXPONENT_SLACK {
        violated.push(ScheduleCondition::BiasSumFinite);
    }
    if 2.0 * s.gamma_a <= 1.0 + EXPONENT_SLACK {
        violated.push(ScheduleCondition::SquaredStepSumFinite);
    }
    Ok(ScheduleValidation {
        valid: violated.is_empty(),
        violated,
    })
}

/// Means of all players, iteration count and the run's RNG.
#[derive(Debug, Clone)]
pub struct LearnerState {
    mu: JointVector,
    t: u64,
    rng: ChaCha8Rng,
}

impl LearnerState {
    /// Starts from `mu0` projected onto `sets`.
    pub fn new(mu0: &JointVector, sets: &ProductSet, seed: u64) -> Result<Self> {
        mu0.ensure_finite("initial means")?;
        Ok(Self {
            mu: sets.project(mu0)?,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Starts from a random feasible point drawn from the run's own RNG.
    pub fn uniform(sets: &ProductSet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = sets.sample(&mut rng);
        Self { mu, t: 0, rng }
    }

    pub fn mu(&self) -> &JointVector {
        &self.mu
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Draws `x_i ~ N(mu_i, sigma^2 I)` for every player. `sigma = 0` yields
    /// `x = mu` exactly.
    pub fn sample_states(&mut self, sigma: f64) -> Result<SampleRecord> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sampling sigma must be finite and >= 0, got {sigma}"
            )));
        }
        let mut x = self.mu.clone();
        for v in x.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v += sigma * z;
        }
        Ok(SampleRecord {
            t: self.t,
            x,
            payoffs: Vec::new(),
            sigma_used: sigma,
        })
    }
}

/// One round of sampled states and the payoffs observed there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: u64,
    pub x: JointVector,
    pub payoffs: Vec<f64>,
    pub sigma_used: f64,
}

impl SampleRecord {
    pub fn fill_payoffs<O: PayoffOracle + ?Sized>(&mut self, oracle: &O) -> Result<()> {
        let payoffs = oracle.payoffs(&self.x)?;
        if let Some(player) = payoffs.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinitePayoff {
                player,
                iteration: self.t,
            });
        }
        self.payoffs = payoffs;
        Ok(())
    }
}

/// One player's projected score step.
///
/// `step` is `gamma(t+1) sigma(t+1)^2` and `sigma_t` the deviation `x` was
/// drawn with.
pub fn projected_score_update(
    set: &ActionSet,
    mu: &[f64],
    x: &[f64],
    payoff: f64,
    step: f64,
    sigma_t: f64,
) -> Result<Vec<f64>> {
    if sigma_t == 0.0 {
        return set.project(mu);
    }
    let scale = step * payoff / (sigma_t * sigma_t);
    let moved: Vec<f64> = mu
        .iter()
        .zip(x)
        .map(|(m, xi)| m - scale * (xi - m))
        .collect();
    set.project(&moved)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub record_states: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialMeans {
    /// Random feasible point drawn from the run seed.
    Uniform,
    Fixed(JointVector),
}

/// Trajectory of one learner run. `means[t]` is `mu(t)` for `t = 0..=T`;
/// these are the actions the players take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub means: Vec<JointVector>,
    /// `betas[t]` is the effective step of the update producing `mu(t + 1)`.
    pub betas: Vec<f64>,
    pub states: Option<Vec<JointVector>>,
    pub payoffs: Option<Vec<Vec<f64>>>,
}

/// Schedule plus action sets: everything a player needs besides its payoffs.
#[derive(Debug, Clone)]
pub struct Learner<'a> {
    schedule: ScheduleSpec,
    sets: &'a ProductSet,
}

impl<'a> Learner<'a> {
    /// Refuses schedules that fail [`validate_schedule`].
    pub fn new(schedule: ScheduleSpec, sets: &'a ProductSet) -> Result<Self> {
        let check = validate_schedule(&schedule)?;
        if !check.valid {
            return Err(Error::InvalidSchedule(
                check.violated.iter().map(|c| c.name().to_string()).collect(),
            ));
        }
        Ok(Self { schedule, sets })
    }

    /// Skips the summability check. Coefficients must still be well formed.
    pub fn new_unchecked(schedule: ScheduleSpec, sets: &'a ProductSet) -> Result<Self> {
        validate_schedule(&schedule)?;
        Ok(Self { schedule, sets })
    }

    pub fn schedule(&self) -> &ScheduleSpec {
        &self.schedule
    }

    /// Deviation used to sample at the state's current iteration.
    pub fn sampling_sigma(&self, state: &LearnerState) -> f64 {
        self.schedule.sigma(state.t + 1)
    }

    /// `gamma(t+1) sigma(t+1)^2` for the update out of the current iteration.
    pub fn step_size(&self, state: &LearnerState) -> f64 {
        self.schedule.beta(state.t + 2)
    }

    pub fn update_means(&self, state: &mut LearnerState, rec: &SampleRecord) -> Result<()> {
        if rec.t != state.t {
            return Err(Error::InvalidArgument(format!(
                "sample record from iteration {} applied at iteration {}",
                rec.t, state.t
            )));
        }
        let n = self.sets.players();
        if rec.payoffs.len() != n {
            return Err(Error::DimensionMismatch {
                context: "payoffs",
                expected: n,
                found: rec.payoffs.len(),
            });
        }
        if let Some(player) = rec.payoffs.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinitePayoff {
                player,
                iteration: rec.t,
            });
        }
        rec.x.ensure_same_shape(&state.mu, "sampled states")?;
        let step = self.step_size(state);
        let mut next = state.mu.clone();
        for i in 0..n {
            let updated = projected_score_update(
                self.sets.factor(i),
                state.mu.player(i),
                rec.x.player(i),
                rec.payoffs[i],
                step,
                rec.sigma_used,
            )?;
            next.player_mut(i).copy_from_slice(&updated);
        }
        state.mu = next;
        state.t += 1;
        Ok(())
    }

    /// Sample, pay, update.
    pub fn step<O: PayoffOracle + ?Sized>(
        &self,
        state: &mut LearnerState,
        oracle: &O,
    ) -> Result<SampleRecord> {
        let sigma = self.sampling_sigma(state);
        let mut rec = state.sample_states(sigma)?;
        rec.fill_payoffs(oracle)?;
        self.update_means(state, &rec)?;
        Ok(rec)
    }

    pub fn run<O: PayoffOracle + ?Sized>(
        &self,
        oracle: &O,
        init: &InitialMeans,
        iterations: u64,
        seed: u64,
        options: RunOptions,
    ) -> Result<Trajectory> {
        if oracle.players() != self.sets.players() || oracle.dim() != self.sets.dim() {
            return Err(Error::DimensionMismatch {
                context: "payoff oracle vs action sets",
                expected: self.sets.players() * self.sets.dim(),
                found: oracle.players() * oracle.dim(),
            });
        }
        let mut state = match init {
            InitialMeans::Uniform => LearnerState::uniform(self.sets, seed),
            InitialMeans::Fixed(mu0) => LearnerState::new(mu0, self.sets, seed)?,
        };
        let cap = iterations as usize + 1;
        let mut means = Vec::with_capacity(cap);
        let mut betas = Vec::with_capacity(cap);
        let mut states = options.record_states.then(|| Vec::with_capacity(cap));
        let mut payoffs = options.record_states.then(|| Vec::with_capacity(cap));
        means.push(state.mu.clone());
        for _ in 0..iterations {
            betas.push(self.step_size(&state));
            let rec = self.step(&mut state, oracle)?;
            means.push(state.mu.clone());
            if let (Some(xs), Some(ps)) = (states.as_mut(), payoffs.as_mut()) {
                xs.push(rec.x);
                ps.push(rec.payoffs);
            }
        }
        Ok(Trajectory {
            seed,
            means,
            betas,
            states,
            payoffs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{random_instance, CostOracle, InstanceSpec};
    use crate::projection::{BoxBudgetSet, BoxSet};

    struct ZeroPayoff {
        players: usize,
        dim: usize,
    }

    impl PayoffOracle for ZeroPayoff {
        fn players(&self) -> usize {
            self.players
        }
        fn dim(&self) -> usize {
            self.dim
        }
        fn payoff(&self, _: usize, _: &JointVector) -> Result<f64> {
            Ok(0.0)
        }
    }

    struct NanPayoff;

    impl PayoffOracle for NanPayoff {
        fn players(&self) -> usize {
            1
        }
        fn dim(&self) -> usize {
            2
        }
        fn payoff(&self, _: usize, _: &JointVector) -> Result<f64> {
            Ok(f64::NAN)
        }
    }

    fn budget_sets(n: usize) -> ProductSet {
        ProductSet::new(
            (0..n)
                .map(|i| BoxBudgetSet::new(4, 6.0, 1.0 + i as f64).unwrap().into())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn case_study_schedule_is_valid() {
        let v = validate_schedule(&ScheduleSpec::case_study()).unwrap();
        assert!(v.valid, "{v:?}");
    }

    #[test]
    fn slow_step_violates_squared_sum() {
        let v = validate_schedule(&ScheduleSpec::new(1.0, 0.4, 0.1, 0.2)).unwrap();
        assert!(!v.valid);
        assert!(v.violated.contains(&ScheduleCondition::SquaredStepSumFinite));
        // 0.4 + 3 * 0.2 = 1: sum gamma sigma^3 is harmonic as well.
        assert!(v.violated.contains(&ScheduleCondition::BiasSumFinite));
    }

    #[test]
    fn slow_sigma_violates_bias_sum() {
        let v = validate_schedule(&ScheduleSpec::new(1.0, 0.51, 0.1, 0.1)).unwrap();
        assert_eq!(v.violated, vec![ScheduleCondition::BiasSumFinite]);
    }

    #[test]
    fn fast_schedule_violates_step_divergence() {
        let v = validate_schedule(&ScheduleSpec::new(1.0, 0.6, 0.1, 0.3)).unwrap();
        assert!(v.violated.contains(&ScheduleCondition::StepSumDiverges));
    }

    #[test]
    fn boundary_exponent_sum_counts_as_divergent() {
        // gamma_a + 2 sigma_a = 1 exactly: harmonic series, still diverges.
        let v = validate_schedule(&ScheduleSpec::new(1.0, 0.6, 0.1, 0.2)).unwrap();
        assert!(v.valid);
    }

    #[test]
    fn malformed_schedules_are_unsupported() {
        for s in [
            ScheduleSpec::new(0.0, 0.51, 0.1, 0.2),
            ScheduleSpec::new(1.0, -0.5, 0.1, 0.2),
            ScheduleSpec::new(1.0, 0.51, f64::NAN, 0.2),
        ] {
            assert!(matches!(validate_schedule(&s), Err(Error::UnsupportedSchedule(_))));
        }
    }

    #[test]
    fn beta_decreases_and_partial_sums_diverge() {
        let s = ScheduleSpec::case_study();
        let p = s.gamma_a + 2.0 * s.sigma_a;
        let c = s.gamma_c * s.sigma_c * s.sigma_c;
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        for t in 1..=1_000_000u64 {
            let b = s.beta(t);
            assert!(b < prev && b > 0.0);
            prev = b;
            sum += b;
            if t.is_power_of_two() || t == 1_000_000 {
                // sum_{1..T} f >= int_1^{T+1} f for decreasing f
                let bound = c * (((t + 1) as f64).powf(1.0 - p) - 1.0) / (1.0 - p);
                assert!(sum >= bound, "t={t}: {sum} < {bound}");
            }
        }
        assert!(sum > 10.0 * s.beta(1));
    }

    #[test]
    fn invalid_schedule_is_refused_unless_unchecked() {
        let sets = budget_sets(2);
        let bad = ScheduleSpec::new(1.0, 0.4, 0.1, 0.2);
        assert!(matches!(Learner::new(bad, &sets), Err(Error::InvalidSchedule(_))));
        assert!(Learner::new_unchecked(bad, &sets).is_ok());
    }

    #[test]
    fn zero_sigma_samples_the_mean() {
        let sets = budget_sets(3);
        let mut st = LearnerState::uniform(&sets, 5);
        let rec = st.sample_states(0.0).unwrap();
        assert_eq!(&rec.x, st.mu());
        assert!(st.sample_states(-1.0).is_err());
    }

    #[test]
    fn sample_moments_match() {
        let sets = ProductSet::new(vec![BoxSet::new(2, 0.0, 5.0).unwrap().into()]).unwrap();
        let mu0 = JointVector::new(1, 2, vec![1.0, 4.0]).unwrap();
        let mut st = LearnerState::new(&mu0, &sets, 17).unwrap();
        let n = 100_000;
        let sigma = 0.5;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let rec = st.sample_states(sigma).unwrap();
            for k in 0..2 {
                let v = rec.x.as_slice()[k];
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            assert!((mean - mu0.as_slice()[k]).abs() <= 4.0 * sigma / (n as f64).sqrt());
            assert!((var / (sigma * sigma) - 1.0).abs() <= 0.05);
        }
    }

    #[test]
    fn zero_payoff_leaves_means_unchanged() {
        let sets = budget_sets(3);
        let learner = Learner::new(ScheduleSpec::case_study(), &sets).unwrap();
        let oracle = ZeroPayoff { players: 3, dim: 4 };
        let traj = learner
            .run(&oracle, &InitialMeans::Uniform, 20, 9, RunOptions::default())
            .unwrap();
        for m in &traj.means {
            assert!(m.distance(&traj.means[0]) <= 1e-12);
        }
    }

    #[test]
    fn sample_at_mean_gives_zero_step() {
        let sets = budget_sets(2);
        let learner = Learner::new(ScheduleSpec::case_study(), &sets).unwrap();
        let mut st = LearnerState::uniform(&sets, 3);
        let before = st.mu().clone();
        let mut rec = st.sample_states(0.0).unwrap();
        rec.payoffs = vec![123.0, -45.0];
        learner.update_means(&mut st, &rec).unwrap();
        assert!(st.mu().distance(&before) <= 1e-12);
        assert_eq!(st.t(), 1);
    }

    #[test]
    fn scalar_update_by_hand() {
        let set: ActionSet = BoxSet::new(1, 0.0, 6.0).unwrap().into();
        let out = projected_score_update(&set, &[1.0], &[2.0], 3.0, 0.1, 1.0).unwrap();
        // Independent scalar form: mu - step * J * (x - mu) / sigma^2, clamped.
        let expected = (1.0f64 - 0.1 * 3.0 * (2.0 - 1.0) / 1.0).clamp(0.0, 6.0);
        assert!((out[0] - expected).abs() < 1e-15);
        assert!((out[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn stale_or_bad_records_are_rejected() {
        let sets = budget_sets(1);
        let learner = Learner::new(ScheduleSpec::case_study(), &sets).unwrap();
        let mut st = LearnerState::uniform(&sets, 1);
        let mut rec = st.sample_states(0.1).unwrap();
        rec.payoffs = vec![f64::NAN];
        assert!(matches!(
            learner.update_means(&mut st, &rec),
            Err(Error::NonFinitePayoff { .. })
        ));
        rec.payoffs = vec![1.0];
        rec.t = 5;
        assert!(learner.update_means(&mut st, &rec).is_err());
    }

    #[test]
    fn nan_payoff_aborts_run() {
        let sets = ProductSet::new(vec![BoxSet::new(2, 0.0, 1.0).unwrap().into()]).unwrap();
        let learner = Learner::new(ScheduleSpec::case_study(), &sets).unwrap();
        let err = learner
            .run(&NanPayoff, &InitialMeans::Uniform, 3, 1, RunOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::NonFinitePayoff { player: 0, iteration: 0 }));
    }

    #[test]
    fn zero_iterations_keep_only_initial_means() {
        let g = random_instance(1, &InstanceSpec::with_players(3)).unwrap();
        let learner = Learner::new(ScheduleSpec::case_study(), crate::games::Game::action_sets(&g)).unwrap();
        let traj = learner
            .run(&CostOracle::new(&g), &InitialMeans::Uniform, 0, 4, RunOptions::default())
            .unwrap();
        assert_eq!(traj.means.len(), 1);
        assert!(traj.betas.is_empty());
    }

    #[test]
    fn runs_are_deterministic_and_feasible() {
        let g = random_instance(2, &InstanceSpec::default()).unwrap();
        let sets = crate::games::Game::action_sets(&g);
        let learner = Learner::new(ScheduleSpec::case_study(), sets).unwrap();
        let oracle = CostOracle::new(&g);
        let opts = RunOptions { record_states: true };
        let a = learner.run(&oracle, &InitialMeans::Uniform, 200, 77, opts).unwrap();
        let b = learner.run(&oracle, &InitialMeans::Uniform, 200, 77, opts).unwrap();
        assert_eq!(a, b);
        let c = learner.run(&oracle, &InitialMeans::Uniform, 200, 78, opts).unwrap();
        assert_ne!(a.means, c.means);
        for m in &a.means {
            assert!(sets.distance(m).unwrap() <= 1e-10);
        }
        assert_eq!(a.states.as_ref().unwrap().len(), 200);
    }

    #[test]
    fn infeasible_start_is_projected() {
        let sets = budget_sets(2);
        let mu0 = JointVector::new(2, 4, vec![10.0; 8]).unwrap();
        let st = LearnerState::new(&mu0, &sets, 0).unwrap();
        assert!(sets.distance(st.mu()).unwrap() <= 1e-12);
    }

    #[test]
    fn learner_only_sees_payoffs() {
        let src = include_str!("learner.rs");
        let body = src.split("#[cfg(test)]").next().unwrap();
        for line in body.lines().filter(|l| l.starts_with("use crate::games")) {
            assert_eq!(line.trim(), "use crate::games::PayoffOracle;");
        }
        for forbidden in ["game_mapping", "assemble_hat_m", "QuadraticAggregativeGame", "impl Game"] {
            assert!(!body.contains(forbidden), "learner references {forbidden}");
        }
    }
}
