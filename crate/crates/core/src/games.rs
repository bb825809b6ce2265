//! Convex game instances.
//!
//! The main instance is the aggregative price game
//!
//! ```text
//! J_i(a) = a_i' Q_i a_i + 2 (C_i (1/N) sum_j a_j + c_i)' a_i
//! ```
//!
//! over box-budget action sets. Its game mapping (stacked own-gradients) is
//!
//! ```text
//! M_i(a) = (Q_i + Q_i') a_i + (2/N) (C_i sum_j a_j + C_i' a_i) + 2 c_i
//! ```
//!
//! which is affine, `M(a) = M_hat a + m`, with diagonal blocks
//! `Q_i + Q_i' + 2 (C_i + C_i') / N`, off-diagonal blocks `2 C_i / N` and
//! `m = 2 [c_1, ..., c_N]`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::joint::JointVector;
use crate::projection::{ActionSet, BoxBudgetSet, ProductSet};

/// Eigenvalue threshold for the PSD tests.
pub const PSD_TOLERANCE: f64 = -1e-10;

/// Default quartic weight of [`SmoothTestGame`].
pub const DEFAULT_QUARTIC_WEIGHT: f64 = 0.05;

/// Full-information view of a game: costs and own-gradients.
pub trait Game: Send + Sync {
    fn players(&self) -> usize;
    fn dim(&self) -> usize;
    fn action_sets(&self) -> &ProductSet;

    /// `J_i(x)`. Defined on all of `R^{Nd}`; `x` need not be feasible.
    fn cost(&self, player: usize, x: &JointVector) -> Result<f64>;

    /// Stacked gradients `[grad_{a_i} J_i(a)]_i`.
    fn game_mapping(&self, a: &JointVector) -> Result<JointVector>;

    fn costs(&self, x: &JointVector) -> Result<Vec<f64>> {
        (0..self.players()).map(|i| self.cost(i, x)).collect()
    }
}

/// The only window a learning agent has onto the game: the scalar cost it
/// incurs at a realized joint state.
pub trait PayoffOracle: Send + Sync {
    fn players(&self) -> usize;
    fn dim(&self) -> usize;
    fn payoff(&self, player: usize, x: &JointVector) -> Result<f64>;

    fn payoffs(&self, x: &JointVector) -> Result<Vec<f64>> {
        (0..self.players()).map(|i| self.payoff(i, x)).collect()
    }
}

/// Wraps a [`Game`] so that only cost values leak through.
pub struct CostOracle<'a, G: ?Sized> {
    game: &'a G,
}

impl<'a, G: Game + ?Sized> CostOracle<'a, G> {
    pub fn new(game: &'a G) -> Self {
        Self { game }
    }
}

impl<G: Game + ?Sized> PayoffOracle for CostOracle<'_, G> {
    fn players(&self) -> usize {
        self.game.players()
    }

    fn dim(&self) -> usize {
        self.game.dim()
    }

    fn payoff(&self, player: usize, x: &JointVector) -> Result<f64> {
        self.game.cost(player, x)
    }

    fn payoffs(&self, x: &JointVector) -> Result<Vec<f64>> {
        self.game.costs(x)
    }
}

/// Closed-form Gaussian smoothing of the game mapping:
/// `E[M(x)]` for `x ~ N(mu, sigma^2 I)`.
pub trait SmoothedMapping {
    fn smoothed_mapping(&self, mu: &JointVector, sigma: f64) -> Result<JointVector>;
}

/// `M(a) = matm * a + mvec`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameMappingAffine {
    pub matm: DMatrix<f64>,
    pub mvec: DVector<f64>,
}

impl GameMappingAffine {
    pub fn apply(&self, a: &JointVector) -> Result<JointVector> {
        if a.len() != self.mvec.len() {
            return Err(Error::DimensionMismatch {
                context: "affine mapping input",
                expected: self.mvec.len(),
                found: a.len(),
            });
        }
        let x = DVector::from_column_slice(a.as_slice());
        let y = &self.matm * x + &self.mvec;
        JointVector::new(a.players(), a.dim(), y.as_slice().to_vec())
    }

    /// Largest singular value of `matm`.
    pub fn spectral_norm(&self) -> f64 {
        self.matm
            .clone()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of `(matm + matm') / 2`.
    pub fn min_symmetric_eigenvalue(&self) -> f64 {
        min_symmetric_eigenvalue(&self.matm)
    }
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub per_player_convex: bool,
    pub psd_hat_m: bool,
    pub lipschitz_estimate: f64,
    pub min_eig_own_hessian: f64,
    pub min_eig_sym_hat_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticRepr", into = "QuadraticRepr")]
pub struct QuadraticAggregativeGame {
    players: usize,
    dim: usize,
    q: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    cv: Vec<DVector<f64>>,
    sets: ProductSet,
}

#[derive(Serialize, Deserialize)]
struct QuadraticRepr {
    #[serde(rename = "N")]
    players: usize,
    #[serde(rename = "d")]
    dim: usize,
    /// Row-major `d x d` matrices, one per player.
    #[serde(rename = "Qm")]
    q: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Cm")]
    c: Vec<Vec<Vec<f64>>>,
    cv: Vec<Vec<f64>>,
    sets: ProductSet,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], dim: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: dim,
            found: rows.len(),
        });
    }
    Ok(DMatrix::from_fn(dim, dim, |r, c| rows[r][c]))
}

impl TryFrom<QuadraticRepr> for QuadraticAggregativeGame {
    type Error = Error;

    fn try_from(r: QuadraticRepr) -> Result<Self> {
        let q = r
            .q
            .iter()
            .map(|m| from_rows(m, r.dim, "Qm"))
            .collect::<Result<Vec<_>>>()?;
        let c = r
            .c
            .iter()
            .map(|m| from_rows(m, r.dim, "Cm"))
            .collect::<Result<Vec<_>>>()?;
        let cv = r.cv.iter().map(|v| DVector::from_vec(v.clone())).collect();
        QuadraticAggregativeGame::new(q, c, cv, r.sets)
    }
}

impl From<QuadraticAggregativeGame> for QuadraticRepr {
    fn from(g: QuadraticAggregativeGame) -> Self {
        QuadraticRepr {
            players: g.players,
            dim: g.dim,
            q: g.q.iter().map(to_rows).collect(),
            c: g.c.iter().map(to_rows).collect(),
            cv: g.cv.iter().map(|v| v.iter().cloned().collect()).collect(),
            sets: g.sets,
        }
    }
}

impl QuadraticAggregativeGame {
    pub fn new(
        q: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        cv: Vec<DVector<f64>>,
        sets: ProductSet,
    ) -> Result<Self> {
        let players = sets.players();
        let dim = sets.dim();
        for (name, len) in [("Qm", q.len()), ("Cm", c.len()), ("cv", cv.len())] {
            if len != players {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} entries for {players} players"
                )));
            }
        }
        for m in q.iter().chain(&c) {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    context: "player matrix",
                    expected: dim,
                    found: m.nrows().max(m.ncols()),
                });
            }
            ensure_finite(m.as_slice(), "game matrix")?;
        }
        for v in &cv {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "price offset",
                    expected: dim,
                    found: v.len(),
                });
            }
            ensure_finite(v.as_slice(), "price offset")?;
        }
        Ok(Self {
            players,
            dim,
            q,
            c,
            cv,
            sets,
        })
    }

    /// `Q_i = C_i = I` for every player.
    pub fn identity(cv: Vec<DVector<f64>>, sets: ProductSet) -> Result<Self> {
        let n = sets.players();
        let d = sets.dim();
        let eye = DMatrix::identity(d, d);
        Self::new(vec![eye.clone(); n], vec![eye; n], cv, sets)
    }

    pub fn q(&self, i: usize) -> &DMatrix<f64> {
        &self.q[i]
    }

    pub fn c(&self, i: usize) -> &DMatrix<f64> {
        &self.c[i]
    }

    pub fn cv(&self, i: usize) -> &DVector<f64> {
        &self.cv[i]
    }

    fn check_input(&self, x: &JointVector) -> Result<()> {
        if x.players() != self.players || x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "joint action vs game",
                expected: self.players * self.dim,
                found: x.len(),
            });
        }
        x.ensure_finite("joint action")
    }

    fn aggregate(&self, x: &JointVector) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for xj in x.iter_players() {
            for (acc, v) in s.iter_mut().zip(xj) {
                *acc += v;
            }
        }
        s
    }

    fn cost_with_aggregate(&self, i: usize, x: &JointVector, sum: &[f64]) -> f64 {
        let d = self.dim;
        let n = self.players as f64;
        let xi = x.player(i);
        let (q, c, cv) = (&self.q[i], &self.c[i], &self.cv[i]);
        let mut total = 0.0;
        for r in 0..d {
            let mut qx = 0.0;
            let mut price = cv[r];
            for k in 0..d {
                qx += q[(r, k)] * xi[k];
                price += c[(r, k)] * sum[k] / n;
            }
            total += xi[r] * qx + 2.0 * price * xi[r];
        }
        total
    }

    fn mapping_into(&self, a: &JointVector, out: &mut [f64]) {
        let d = self.dim;
        let n = self.players as f64;
        let sum = self.aggregate(a);
        for i in 0..self.players {
            let ai = a.player(i);
            let (q, c, cv) = (&self.q[i], &self.c[i], &self.cv[i]);
            for r in 0..d {
                let mut g = 2.0 * cv[r];
                for k in 0..d {
                    g += (q[(r, k)] + q[(k, r)]) * ai[k];
                    g += 2.0 / n * (c[(r, k)] * sum[k] + c[(k, r)] * ai[k]);
                }
                out[i * d + r] = g;
            }
        }
    }

    /// `M_hat` and `m` with `game_mapping(a) = M_hat a + m`.
    pub fn assemble_hat_m(&self) -> GameMappingAffine {
        let d = self.dim;
        let nd = self.players * d;
        let n = self.players as f64;
        let mut matm = DMatrix::zeros(nd, nd);
        let mut mvec = DVector::zeros(nd);
        for i in 0..self.players {
            let (q, c) = (&self.q[i], &self.c[i]);
            for j in 0..self.players {
                for r in 0..d {
                    for k in 0..d {
                        let mut v = 2.0 / n * c[(r, k)];
                        if i == j {
                            v += q[(r, k)] + q[(k, r)] + 2.0 / n * c[(k, r)];
                        }
                        matm[(i * d + r, j * d + k)] = v;
                    }
                }
            }
            for r in 0..d {
                mvec[i * d + r] = 2.0 * self.cv[i][r];
            }
        }
        GameMappingAffine { matm, mvec }
    }

    /// Hessian of `J_i` in its own action: `Q_i + Q_i' + 2 (C_i + C_i') / N`.
    pub fn own_hessian(&self, i: usize) -> DMatrix<f64> {
        let n = self.players as f64;
        let q = &self.q[i];
        let c = &self.c[i];
        q + q.transpose() + (c + c.transpose()) * (2.0 / n)
    }

    pub fn check_assumptions(&self) -> AssumptionReport {
        let min_eig_own_hessian = (0..self.players)
            .map(|i| min_symmetric_eigenvalue(&self.own_hessian(i)))
            .fold(f64::INFINITY, f64::min);
        let affine = self.assemble_hat_m();
        let min_eig_sym_hat_m = affine.min_symmetric_eigenvalue();
        AssumptionReport {
            per_player_convex: min_eig_own_hessian >= PSD_TOLERANCE,
            psd_hat_m: min_eig_sym_hat_m >= PSD_TOLERANCE,
            lipschitz_estimate: affine.spectral_norm(),
            min_eig_own_hessian,
            min_eig_sym_hat_m,
        }
    }
}

impl Game for QuadraticAggregativeGame {
    fn players(&self) -> usize {
        self.players
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn action_sets(&self) -> &ProductSet {
        &self.sets
    }

    fn cost(&self, player: usize, x: &JointVector) -> Result<f64> {
        self.check_input(x)?;
        x.check_player(player)?;
        Ok(self.cost_with_aggregate(player, x, &self.aggregate(x)))
    }

    fn costs(&self, x: &JointVector) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let sum = self.aggregate(x);
        Ok((0..self.players)
            .map(|i| self.cost_with_aggregate(i, x, &sum))
            .collect())
    }

    fn game_mapping(&self, a: &JointVector) -> Result<JointVector> {
        self.check_input(a)?;
        let mut out = JointVector::zeros(self.players, self.dim)?;
        self.mapping_into(a, out.as_mut_slice());
        Ok(out)
    }
}

impl SmoothedMapping for QuadraticAggregativeGame {
    /// The mapping is affine, so smoothing leaves it unchanged.
    fn smoothed_mapping(&self, mu: &JointVector, sigma: f64) -> Result<JointVector> {
        check_sigma(sigma)?;
        self.game_mapping(mu)
    }
}

/// Quadratic game plus `weight * sum_k (a_ik)^4` in every cost. The
/// mapping picks up `4 weight a_ik^3`, so it is no longer affine and Gaussian
/// smoothing adds the exact bias `12 weight sigma^2 mu_ik` per coordinate
/// (from `E[x^3] = mu^3 + 3 mu sigma^2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTestGame {
    pub base: QuadraticAggregativeGame,
    pub epsilon: f64,
}

impl SmoothTestGame {
    pub fn new(base: QuadraticAggregativeGame, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quartic weight must be positive, got {epsilon}"
            )));
        }
        Ok(Self { base, epsilon })
    }

    /// Exact `M_tilde(mu, sigma) - M(mu)`.
    pub fn smoothing_bias(&self, mu: &JointVector, sigma: f64) -> Result<JointVector> {
        check_sigma(sigma)?;
        self.base.check_input(mu)?;
        let scale = 12.0 * self.epsilon * sigma * sigma;
        let entries = mu.as_slice().iter().map(|m| scale * m).collect();
        JointVector::new(mu.players(), mu.dim(), entries)
    }
}

impl Game for SmoothTestGame {
    fn players(&self) -> usize {
        self.base.players
    }

    fn dim(&self) -> usize {
        self.base.dim
    }

    fn action_sets(&self) -> &ProductSet {
        &self.base.sets
    }

    fn cost(&self, player: usize, x: &JointVector) -> Result<f64> {
        let quad = self.base.cost(player, x)?;
        let quartic: f64 = x.player(player).iter().map(|v| v.powi(4)).sum();
        Ok(quad + self.epsilon * quartic)
    }

    fn costs(&self, x: &JointVector) -> Result<Vec<f64>> {
        let mut out = self.base.costs(x)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.epsilon * x.player(i).iter().map(|v| v.powi(4)).sum::<f64>();
        }
        Ok(out)
    }

    fn game_mapping(&self, a: &JointVector) -> Result<JointVector> {
        let mut out = self.base.game_mapping(a)?;
        for (o, v) in out.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *o += 4.0 * self.epsilon * v.powi(3);
        }
        Ok(out)
    }
}

impl SmoothedMapping for SmoothTestGame {
    fn smoothed_mapping(&self, mu: &JointVector, sigma: f64) -> Result<JointVector> {
        let m = self.game_mapping(mu)?;
        let bias = self.smoothing_bias(mu, sigma)?;
        Ok(m.add_scaled(1.0, &bias))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {sigma}")))
    }
}

/// Serializable wrapper for any concrete game this crate provides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameSpec {
    Quadratic(QuadraticAggregativeGame),
    Smooth(SmoothTestGame),
}

impl GameSpec {
    pub fn as_game(&self) -> &dyn Game {
        match self {
            GameSpec::Quadratic(g) => g,
            GameSpec::Smooth(g) => g,
        }
    }

    pub fn quadratic(&self) -> &QuadraticAggregativeGame {
        match self {
            GameSpec::Quadratic(g) => g,
            GameSpec::Smooth(g) => &g.base,
        }
    }
}

impl Game for GameSpec {
    fn players(&self) -> usize {
        self.as_game().players()
    }

    fn dim(&self) -> usize {
        self.as_game().dim()
    }

    fn action_sets(&self) -> &ProductSet {
        self.as_game().action_sets()
    }

    fn cost(&self, player: usize, x: &JointVector) -> Result<f64> {
        self.as_game().cost(player, x)
    }

    fn costs(&self, x: &JointVector) -> Result<Vec<f64>> {
        self.as_game().costs(x)
    }

    fn game_mapping(&self, a: &JointVector) -> Result<JointVector> {
        self.as_game().game_mapping(a)
    }
}

impl SmoothedMapping for GameSpec {
    fn smoothed_mapping(&self, mu: &JointVector, sigma: f64) -> Result<JointVector> {
        match self {
            GameSpec::Quadratic(g) => g.smoothed_mapping(mu, sigma),
            GameSpec::Smooth(g) => g.smoothed_mapping(mu, sigma),
        }
    }
}

/// Parameters of the random case-study instance class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub players: usize,
    pub dim: usize,
    /// Per-period consumption cap.
    pub upper: f64,
    pub c_range: (f64, f64),
    pub budget_range: (f64, f64),
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            players: 10,
            dim: 4,
            upper: 6.0,
            c_range: (0.0, 5.0),
            budget_range: (0.5, 10.0),
        }
    }
}

impl InstanceSpec {
    pub fn with_players(players: usize) -> Self {
        Self {
            players,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite(
            &[
                self.upper,
                self.c_range.0,
                self.c_range.1,
                self.budget_range.0,
                self.budget_range.1,
            ],
            "instance spec",
        )?;
        if self.players == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("instance needs N >= 1 and d >= 1".into()));
        }
        if self.c_range.0 >= self.c_range.1 || self.budget_range.0 >= self.budget_range.1 {
            return Err(Error::InvalidArgument("ranges must satisfy lo < hi".into()));
        }
        let max = self.dim as f64 * self.upper;
        if self.budget_range.0 <= 0.0 || self.budget_range.1 >= max {
            return Err(Error::InfeasibleSet {
                budget: if self.budget_range.0 <= 0.0 {
                    self.budget_range.0
                } else {
                    self.budget_range.1
                },
                max,
            });
        }
        Ok(())
    }
}

/// `Q_i = C_i = I`, price offsets and budgets drawn uniformly; deterministic
/// in `seed`.
pub fn random_instance(seed: u64, spec: &InstanceSpec) -> Result<QuadraticAggregativeGame> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c_lo, c_hi) = spec.c_range;
    let (b_lo, b_hi) = spec.budget_range;
    let mut cv = Vec::with_capacity(spec.players);
    let mut factors = Vec::with_capacity(spec.players);
    for _ in 0..spec.players {
        let c: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(c_lo..c_hi)).collect();
        cv.push(DVector::from_vec(c));
        let budget = rng.random_range(b_lo..b_hi);
        factors.push(ActionSet::from(BoxBudgetSet::new(spec.dim, spec.upper, budget)?));
    }
    QuadraticAggregativeGame::identity(cv, ProductSet::new(factors)?)
}
