//! Per-player action sets and exact Euclidean projection onto them.
//!
//! The case-study set is `{a in R^d : 0 <= a_k <= upper, sum_k a_k = budget}`.
//! Its projection has the Lagrangian form `clamp(p - lambda, 0, upper)` where
//! `lambda` zeroes the budget residual. The residual is piecewise linear and
//! nonincreasing in `lambda` with kinks at `p_k` and `p_k - upper`, so we
//! locate the crossing segment among the sorted kinks and solve it exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::joint::{distance, JointVector};

/// Box bounds `[0, upper]^dim` plus the equality `sum = budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxBudgetRepr", into = "BoxBudgetRepr")]
pub struct BoxBudgetSet {
    dim: usize,
    upper: f64,
    budget: f64,
}

#[derive(Serialize, Deserialize)]
struct BoxBudgetRepr {
    dim: usize,
    upper: f64,
    budget: f64,
}

impl TryFrom<BoxBudgetRepr> for BoxBudgetSet {
    type Error = Error;

    fn try_from(r: BoxBudgetRepr) -> Result<Self> {
        BoxBudgetSet::new(r.dim, r.upper, r.budget)
    }
}

impl From<BoxBudgetSet> for BoxBudgetRepr {
    fn from(s: BoxBudgetSet) -> Self {
        BoxBudgetRepr {
            dim: s.dim,
            upper: s.upper,
            budget: s.budget,
        }
    }
}

impl BoxBudgetSet {
    pub fn new(dim: usize, upper: f64, budget: f64) -> Result<Self> {
        ensure_finite(&[upper, budget], "box-budget set parameters")?;
        if dim == 0 {
            return Err(Error::InvalidArgument("box-budget set needs dim >= 1".into()));
        }
        if upper <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "box-budget upper bound must be positive, got {upper}"
            )));
        }
        let max = dim as f64 * upper;
        if !(0.0..=max).contains(&budget) {
            return Err(Error::InfeasibleSet { budget, max });
        }
        Ok(Self { dim, upper, budget })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    fn clamped_sum(&self, p: &[f64], lambda: f64) -> f64 {
        p.iter().map(|v| (v - lambda).clamp(0.0, self.upper)).sum()
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len(p, self.dim)?;
        ensure_finite(p, "projection input")?;
        let ub = self.upper;
        let b = self.budget;
        if b <= 0.0 {
            return Ok(vec![0.0; self.dim]);
        }
        if b >= self.dim as f64 * ub {
            return Ok(vec![ub; self.dim]);
        }

        let mut kinks: Vec<f64> = p.iter().flat_map(|&v| [v - ub, v]).collect();
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();

        // sum(first kink) = dim * ub >= b and sum(last kink) = 0 <= b, so the
        // crossing lies in [kinks[lo], kinks[lo + 1]].
        let (mut lo, mut hi) = (0usize, kinks.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.clamped_sum(p, kinks[mid]) >= b {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (s_lo, s_hi) = (self.clamped_sum(p, kinks[lo]), self.clamped_sum(p, kinks[hi]));
        let mut lambda = if s_lo > s_hi {
            kinks[lo] + (s_lo - b) / (s_lo - s_hi) * (kinks[hi] - kinks[lo])
        } else {
            kinks[lo]
        };

        // Re-solve on the identified active set to strip interpolation rounding.
        let (mut free_sum, mut free_count, mut at_upper) = (0.0, 0usize, 0usize);
        for &v in p {
            let z = v - lambda;
            if z >= ub {
                at_upper += 1;
            } else if z > 0.0 {
                free_sum += v;
                free_count += 1;
            }
        }
        if free_count > 0 {
            lambda = (free_sum + at_upper as f64 * ub - b) / free_count as f64;
        }
        Ok(p.iter().map(|v| (v - lambda).clamp(0.0, ub)).collect())
    }

    fn sample_box<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim)
            .map(|_| rng.random_range(0.0..=self.upper))
            .collect()
    }
}

/// Plain coordinate box `[lower, upper]^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoxSet {
    dim: usize,
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    dim: usize,
    lower: f64,
    upper: f64,
}

impl TryFrom<BoxRepr> for BoxSet {
    type Error = Error;

    fn try_from(r: BoxRepr) -> Result<Self> {
        BoxSet::new(r.dim, r.lower, r.upper)
    }
}

impl From<BoxSet> for BoxRepr {
    fn from(s: BoxSet) -> Self {
        BoxRepr {
            dim: s.dim,
            lower: s.lower,
            upper: s.upper,
        }
    }
}

impl BoxSet {
    pub fn new(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        ensure_finite(&[lower, upper], "box bounds")?;
        if dim == 0 {
            return Err(Error::InvalidArgument("box set needs dim >= 1".into()));
        }
        if lower > upper {
            return Err(Error::InvalidArgument(format!(
                "empty box: lower {lower} > upper {upper}"
            )));
        }
        Ok(Self { dim, lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len(p, self.dim)?;
        ensure_finite(p, "projection input")?;
        Ok(p.iter().map(|v| v.clamp(self.lower, self.upper)).collect())
    }
}

/// One player's action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSet {
    BoxBudget(BoxBudgetSet),
    Box(BoxSet),
}

impl From<BoxBudgetSet> for ActionSet {
    fn from(s: BoxBudgetSet) -> Self {
        ActionSet::BoxBudget(s)
    }
}

impl From<BoxSet> for ActionSet {
    fn from(s: BoxSet) -> Self {
        ActionSet::Box(s)
    }
}

impl ActionSet {
    pub fn dim(&self) -> usize {
        match self {
            ActionSet::BoxBudget(s) => s.dim(),
            ActionSet::Box(s) => s.dim(),
        }
    }

    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self {
            ActionSet::BoxBudget(s) => s.project(p),
            ActionSet::Box(s) => s.project(p),
        }
    }

    /// Upper bound on the set's diameter (that of its bounding box).
    pub fn diameter(&self) -> f64 {
        match self {
            ActionSet::BoxBudget(s) => (s.dim as f64).sqrt() * s.upper,
            ActionSet::Box(s) => (s.dim as f64).sqrt() * (s.upper - s.lower),
        }
    }

    /// Euclidean distance from `p` to the set.
    pub fn distance(&self, p: &[f64]) -> Result<f64> {
        Ok(distance(p, &self.project(p)?))
    }

    /// Draw a feasible point: uniform on the bounding box, then projected.
    /// Exactly uniform for plain boxes, projection-skewed on a budget slice.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ActionSet::BoxBudget(s) => s
                .project(&s.sample_box(rng))
                .expect("box sample is finite and correctly sized"),
            ActionSet::Box(s) => (0..s.dim)
                .map(|_| rng.random_range(s.lower..=s.upper))
                .collect(),
        }
    }
}

/// The joint action set `A_1 x ... x A_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSet {
    factors: Vec<ActionSet>,
}

impl ProductSet {
    pub fn new(factors: Vec<ActionSet>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::InvalidArgument("product set needs at least one factor".into()));
        };
        let dim = first.dim();
        if let Some(bad) = factors.iter().find(|f| f.dim() != dim) {
            return Err(Error::DimensionMismatch {
                context: "product set factor",
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[ActionSet] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &ActionSet {
        &self.factors[i]
    }

    pub fn players(&self) -> usize {
        self.factors.len()
    }

    pub fn dim(&self) -> usize {
        self.factors[0].dim()
    }

    fn check_shape(&self, p: &JointVector) -> Result<()> {
        if p.players() != self.players() {
            return Err(Error::DimensionMismatch {
                context: "joint vector players vs product factors",
                expected: self.players(),
                found: p.players(),
            });
        }
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "joint vector dim vs factor dim",
                expected: self.dim(),
                found: p.dim(),
            });
        }
        Ok(())
    }

    /// Factor-wise projection.
    pub fn project(&self, p: &JointVector) -> Result<JointVector> {
        self.check_shape(p)?;
        let mut out = p.clone();
        for (i, set) in self.factors.iter().enumerate() {
            let proj = set.project(p.player(i))?;
            out.player_mut(i).copy_from_slice(&proj);
        }
        Ok(out)
    }

    pub fn distance(&self, p: &JointVector) -> Result<f64> {
        Ok(p.distance(&self.project(p)?))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> JointVector {
        let slices: Vec<Vec<f64>> = self.factors.iter().map(|f| f.sample(rng)).collect();
        JointVector::from_players(&slices).expect("factors share one dimension")
    }
}

fn check_len(p: &[f64], dim: usize) -> Result<()> {
    if p.len() == dim {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: "projection input",
            expected: dim,
            found: p.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::dot;
    use proptest::prelude::*;

    /// Independent oracle: dense grid over lambda, then plain bisection on the
    /// budget residual inside the bracketing grid cell.
    pub(crate) fn grid_oracle(p: &[f64], set: &BoxBudgetSet) -> Vec<f64> {
        let ub = set.upper();
        let b = set.budget();
        let sum = |lam: f64| -> f64 { p.iter().map(|v| (v - lam).max(0.0).min(ub)).sum() };
        let lo = p.iter().cloned().fold(f64::INFINITY, f64::min) - ub - 1.0;
        let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        let steps = 4000;
        let h = (hi - lo) / steps as f64;
        let mut a = lo;
        let mut c = hi;
        for k in 0..steps {
            let l0 = lo + k as f64 * h;
            let l1 = l0 + h;
            if sum(l0) >= b && sum(l1) <= b {
                a = l0;
                c = l1;
                break;
            }
        }
        while c - a > 1e-12 {
            let m = 0.5 * (a + c);
            if sum(m) >= b {
                a = m;
            } else {
                c = m;
            }
        }
        let lam = 0.5 * (a + c);
        p.iter().map(|v| (v - lam).max(0.0).min(ub)).collect()
    }

    #[test]
    fn feasible_point_is_fixed() {
        let set = BoxBudgetSet::new(2, 6.0, 3.0).unwrap();
        let out = set.project(&[1.0, 2.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_point_splits_budget() {
        let set = BoxBudgetSet::new(2, 6.0, 6.0).unwrap();
        assert_eq!(set.project(&[10.0, 10.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn extreme_budgets() {
        let zero = BoxBudgetSet::new(3, 2.0, 0.0).unwrap();
        assert_eq!(zero.project(&[5.0, -1.0, 0.3]).unwrap(), vec![0.0; 3]);
        let full = BoxBudgetSet::new(3, 2.0, 6.0).unwrap();
        assert_eq!(full.project(&[5.0, -1.0, 0.3]).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn rejects_infeasible_and_nonfinite() {
        assert!(matches!(
            BoxBudgetSet::new(2, 1.0, 2.5),
            Err(Error::InfeasibleSet { .. })
        ));
        assert!(BoxBudgetSet::new(2, 1.0, -0.1).is_err());
        assert!(BoxBudgetSet::new(2, 0.0, 0.0).is_err());
        assert!(BoxBudgetSet::new(2, f64::NAN, 1.0).is_err());
        let set = BoxBudgetSet::new(2, 6.0, 3.0).unwrap();
        assert!(matches!(set.project(&[f64::NAN, 1.0]), Err(Error::NonFinite(_))));
        assert!(set.project(&[f64::INFINITY, 1.0]).is_err());
        assert!(set.project(&[1.0]).is_err());
    }

    #[test]
    fn ties_in_input_are_handled() {
        let set = BoxBudgetSet::new(4, 6.0, 5.0).unwrap();
        let out = set.project(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        for v in out {
            assert!((v - 1.25).abs() < 1e-14);
        }
    }

    #[test]
    fn product_projection_is_factorwise() {
        let a = BoxBudgetSet::new(2, 6.0, 3.0).unwrap();
        let b = BoxBudgetSet::new(2, 6.0, 6.0).unwrap();
        let sets = ProductSet::new(vec![a.clone().into(), b.clone().into()]).unwrap();
        let p = JointVector::new(2, 2, vec![4.0, 4.0, 10.0, 10.0]).unwrap();
        let out = sets.project(&p).unwrap();
        assert_eq!(out.player(0), a.project(&[4.0, 4.0]).unwrap().as_slice());
        assert_eq!(out.player(1), &[3.0, 3.0]);

        let feasible = JointVector::new(2, 2, vec![1.0, 2.0, 3.0, 3.0]).unwrap();
        assert_eq!(sets.project(&feasible).unwrap(), feasible);

        let wrong = JointVector::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(sets.project(&wrong).is_err());
    }

    #[test]
    fn product_rejects_mixed_dims() {
        let a = BoxBudgetSet::new(2, 6.0, 3.0).unwrap();
        let b = BoxSet::new(3, 0.0, 1.0).unwrap();
        assert!(ProductSet::new(vec![a.into(), b.into()]).is_err());
        assert!(ProductSet::new(vec![]).is_err());
    }

    #[test]
    fn action_set_json_is_tagged() {
        let s: ActionSet = BoxBudgetSet::new(4, 6.0, 2.0).unwrap().into();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"box_budget\""));
        assert_eq!(serde_json::from_str::<ActionSet>(&text).unwrap(), s);
        let bad = r#"{"kind":"box_budget","dim":2,"upper":1.0,"budget":3.0}"#;
        assert!(serde_json::from_str::<ActionSet>(bad).is_err());
    }

    fn set_and_points(n: usize) -> impl Strategy<Value = (BoxBudgetSet, Vec<Vec<f64>>)> {
        (1usize..=8, 0.5f64..8.0, 0.0f64..=1.0).prop_flat_map(move |(d, ub, frac)| {
            let set = BoxBudgetSet::new(d, ub, frac * d as f64 * ub).unwrap();
            (
                Just(set),
                proptest::collection::vec(proptest::collection::vec(-5.0f64..15.0, d), n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_grid_oracle((set, pts) in set_and_points(1)) {
            let p = &pts[0];
            let ours = set.project(p).unwrap();
            let oracle = grid_oracle(p, &set);
            prop_assert!(distance(&ours, &oracle) <= 1e-8);
            let s: f64 = ours.iter().sum();
            prop_assert!((s - set.budget()).abs() <= 1e-12 * set.budget().max(1.0));
            prop_assert!(ours.iter().all(|&v| (0.0..=set.upper()).contains(&v)));
        }

        #[test]
        fn idempotent_and_nonexpansive((set, pts) in set_and_points(2)) {
            let pp = set.project(&pts[0]).unwrap();
            let qq = set.project(&pts[1]).unwrap();
            let ppp = set.project(&pp).unwrap();
            prop_assert!(distance(&pp, &ppp) <= 1e-12);
            prop_assert!(distance(&pp, &qq) <= distance(&pts[0], &pts[1]) + 1e-12);
        }

        #[test]
        fn variational_characterization((set, pts) in set_and_points(2), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = &pts[0];
            let proj = set.project(p).unwrap();
            let y = ActionSet::from(set.clone()).sample(&mut rng);
            let r: Vec<f64> = p.iter().zip(&proj).map(|(a, b)| a - b).collect();
            let dy: Vec<f64> = y.iter().zip(&proj).map(|(a, b)| a - b).collect();
            prop_assert!(dot(&r, &dy) <= 1e-10 * distance(p, &y));
        }
    }
}
