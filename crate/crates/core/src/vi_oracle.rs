//! Ground-truth equilibria through the variational inequality
//! `find a* in A with (M(a*), y - a*) >= 0 for all y in A`.
//!
//! Solutions are computed with the extragradient method, certified with the
//! natural residual `||a - Proj_A(a - M(a))||`, and cross-checked with a
//! best-response gap that never touches the mapping's VI structure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{Game, QuadraticAggregativeGame};
use crate::joint::{dot, JointVector};
use crate::projection::ProductSet;

/// Fraction of `1 / L` used as the extragradient step.
pub const STEP_FRACTION: f64 = 0.9;
/// Starts used when uniqueness is not guaranteed.
pub const DEFAULT_STARTS: usize = 8;
/// Solutions closer than this are the same equilibrium.
pub const CLUSTER_RADIUS: f64 = 1e-6;
/// Pairs with `(M(x), x - y)` below `-PSEUDO_MONOTONE_SLACK` count as violations.
pub const PSEUDO_MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VISolution {
    pub a_star: JointVector,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `||a - Proj_A(a - M(a))||`; zero exactly on the solution set.
pub fn vi_residual<F>(a: &JointVector, mapping: F, sets: &ProductSet) -> Result<f64>
where
    F: Fn(&JointVector) -> Result<JointVector>,
{
    let m = mapping(a)?;
    let moved = a.sub(&m);
    Ok(a.distance(&sets.project(&moved)?))
}

/// Korpelevich extragradient from `start`:
///
/// ```text
/// y = Proj(a - s M(a)),  a <- Proj(a - s M(y))
/// ```
///
/// Stops once the natural residual drops to `tol`. On hitting `max_iter` the
/// best iterate seen is returned with `converged = false`.
pub fn solve_vi_extragradient<F>(
    mapping: F,
    sets: &ProductSet,
    start: &JointVector,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<VISolution>
where
    F: Fn(&JointVector) -> Result<JointVector>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!("extragradient step must be positive, got {step}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut a = sets.project(start)?;
    let mut best = a.clone();
    let mut best_res = f64::INFINITY;
    for it in 0..=max_iter {
        let m = mapping(&a)?;
        let res = a.distance(&sets.project(&a.sub(&m))?);
        if res < best_res {
            best_res = res;
            best = a.clone();
        }
        if res <= tol {
            return Ok(VISolution {
                a_star: a,
                residual: res,
                iterations: it,
                converged: true,
            });
        }
        if it == max_iter {
            break;
        }
        let y = sets.project(&a.add_scaled(-step, &m))?;
        let my = mapping(&y)?;
        a = sets.project(&a.add_scaled(-step, &my))?;
    }
    Ok(VISolution {
        a_star: best,
        residual: best_res,
        iterations: max_iter,
        converged: false,
    })
}

/// Runs the solver from `starts` random feasible points and keeps one
/// representative per cluster of radius [`CLUSTER_RADIUS`]. Fails if any
/// start does not converge.
pub fn solve_vi_multistart<F>(
    mapping: F,
    sets: &ProductSet,
    step: f64,
    tol: f64,
    max_iter: usize,
    starts: usize,
    seed: u64,
) -> Result<Vec<VISolution>>
where
    F: Fn(&JointVector) -> Result<JointVector>,
{
    if starts == 0 {
        return Err(Error::InvalidArgument("multistart needs at least one start".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<VISolution> = Vec::new();
    for _ in 0..starts {
        let start = sets.sample(&mut rng);
        let sol = solve_vi_extragradient(&mapping, sets, &start, step, tol, max_iter)?;
        if !sol.converged {
            return Err(Error::OracleNotConverged {
                residual: sol.residual,
                iterations: sol.iterations,
            });
        }
        if !found
            .iter()
            .any(|f| f.a_star.distance(&sol.a_star) <= CLUSTER_RADIUS)
        {
            found.push(sol);
        }
    }
    Ok(found)
}

/// Ground truth for a quadratic instance: step `0.9 / L` with `L` the
/// spectral norm of `M_hat`. Strongly monotone instances use a single start;
/// otherwise [`DEFAULT_STARTS`] starts are clustered.
pub fn solve_quadratic_game(
    game: &QuadraticAggregativeGame,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<Vec<VISolution>> {
    let report = game.check_assumptions();
    let step = STEP_FRACTION / report.lipschitz_estimate.max(f64::MIN_POSITIVE);
    let starts = if report.min_eig_sym_hat_m > 1e-8 {
        1
    } else {
        DEFAULT_STARTS
    };
    solve_vi_multistart(
        |a: &JointVector| game.game_mapping(a),
        game.action_sets(),
        step,
        tol,
        max_iter,
        starts,
        seed,
    )
}

/// `max_i [J_i(a) - min_{b in A_i} J_i(b, a_-i)]`.
///
/// Each inner problem is solved by projected gradient with backtracking from
/// `b = a_i`, so every term is non-negative. Iteration stops once the
/// gradient-mapping norm times the set diameter is below `tol`, which bounds
/// the suboptimality of convex inner problems by `tol`.
pub fn best_response_gap<G: Game + ?Sized>(game: &G, a: &JointVector, tol: f64) -> Result<f64> {
    const MAX_ITER: usize = 200_000;
    let sets = game.action_sets();
    let dist = sets.distance(a)?;
    if dist > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "best-response gap needs a feasible point, distance to A is {dist:e}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut gap: f64 = 0.0;
    for i in 0..game.players() {
        let set = sets.factor(i);
        let diameter = set.diameter().max(f64::MIN_POSITIVE);
        let own = |b: &[f64]| -> Result<(f64, Vec<f64>)> {
            let x = a.with_player(i, b)?;
            let cost = game.cost(i, &x)?;
            let grad = game.game_mapping(&x)?.player(i).to_vec();
            Ok((cost, grad))
        };
        let base = game.cost(i, a)?;
        let mut b = a.player(i).to_vec();
        let (mut f, mut g) = own(&b)?;
        let mut s = 1.0;
        for _ in 0..MAX_ITER {
            // Slack covers rounding in the cost evaluations near the optimum.
            let slack = 1e-12 * f.abs().max(1.0);
            let (next, f_next) = loop {
                let cand: Vec<f64> = b.iter().zip(&g).map(|(v, gv)| v - s * gv).collect();
                let cand = set.project(&cand)?;
                let diff: Vec<f64> = cand.iter().zip(&b).map(|(c, v)| c - v).collect();
                let f_cand = game.cost(i, &a.with_player(i, &cand)?)?;
                let model = f + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * s);
                if f_cand <= model + slack || s < 1e-16 {
                    break (cand, f_cand);
                }
                s *= 0.5;
            };
            let moved = crate::joint::distance(&next, &b);
            let grad_map = moved / s;
            if grad_map * diameter <= tol || moved == 0.0 || f_next > f {
                break;
            }
            b = next;
            f = f_next;
            g = own(&b)?.1;
            s *= 2.0;
        }
        gap = gap.max(base - f);
    }
    Ok(gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoMonotoneReport {
    pub pairs: usize,
    pub violations: usize,
}

/// Counts sampled feasible pairs where `(M(y), x - y) >= 0` but
/// `(M(x), x - y) < -1e-9`. Zero violations is necessary, not sufficient.
pub fn check_pseudo_monotone_sampled<F>(
    mapping: F,
    sets: &ProductSet,
    n_pairs: usize,
    seed: u64,
) -> Result<PseudoMonotoneReport>
where
    F: Fn(&JointVector) -> Result<JointVector>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..n_pairs {
        let x = sets.sample(&mut rng);
        let y = sets.sample(&mut rng);
        let diff = x.sub(&y);
        if mapping(&y)?.dot(&diff) >= 0.0 && mapping(&x)?.dot(&diff) < -PSEUDO_MONOTONE_SLACK {
            violations += 1;
        }
    }
    Ok(PseudoMonotoneReport {
        pairs: n_pairs,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{random_instance, InstanceSpec};
    use crate::projection::{BoxBudgetSet, BoxSet};
    use nalgebra::{DMatrix, DVector};

    fn single_parabola(lower: f64, upper: f64) -> QuadraticAggregativeGame {
        let sets = ProductSet::new(vec![BoxSet::new(1, lower, upper).unwrap().into()]).unwrap();
        QuadraticAggregativeGame::new(
            vec![DMatrix::identity(1, 1)],
            vec![DMatrix::zeros(1, 1)],
            vec![DVector::zeros(1)],
            sets,
        )
        .unwrap()
    }

    #[test]
    fn boundary_minimizer_of_parabola() {
        let g = single_parabola(1.0, 6.0);
        let sols = solve_quadratic_game(&g, 1e-12, 10_000, 1).unwrap();
        assert_eq!(sols.len(), 1);
        assert!((sols[0].a_star.as_slice()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solver_residual_is_honest() {
        let g = random_instance(3, &InstanceSpec::default()).unwrap();
        let sol = &solve_quadratic_game(&g, 1e-10, 100_000, 0).unwrap()[0];
        assert!(sol.converged);
        let recomputed = vi_residual(&sol.a_star, |a: &JointVector| g.game_mapping(a), g.action_sets()).unwrap();
        assert!(recomputed <= 1e-10);
        assert_eq!(recomputed, sol.residual);
    }

    #[test]
    fn max_iter_reports_not_converged() {
        let g = random_instance(3, &InstanceSpec::default()).unwrap();
        let start = JointVector::zeros(10, 4).unwrap();
        let sol = solve_vi_extragradient(|a: &JointVector| g.game_mapping(a), g.action_sets(), &start, 0.01, 1e-14, 3)
            .unwrap();
        assert!(!sol.converged);
        assert!(sol.residual > 1e-14);
        assert!(g.action_sets().distance(&sol.a_star).unwrap() <= 1e-12);
    }

    #[test]
    fn residual_positive_off_solution_and_pure() {
        let g = single_parabola(-10.0, 10.0);
        let a = JointVector::new(1, 1, vec![0.5]).unwrap();
        // M(a) = 2a = 1, unconstrained neighbourhood: residual = |M(a)|.
        let r1 = vi_residual(&a, |x: &JointVector| g.game_mapping(x), g.action_sets()).unwrap();
        let r2 = vi_residual(&a, |x: &JointVector| g.game_mapping(x), g.action_sets()).unwrap();
        assert!((r1 - 1.0).abs() < 1e-15);
        assert_eq!(r1, r2);
    }

    #[test]
    fn gap_vanishes_at_solution_and_not_elsewhere() {
        let g = random_instance(8, &InstanceSpec::default()).unwrap();
        let sol = &solve_quadratic_game(&g, 1e-10, 100_000, 0).unwrap()[0];
        let gap = best_response_gap(&g, &sol.a_star, 1e-9).unwrap();
        assert!(gap <= 1e-6, "gap {gap}");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let far = g.action_sets().sample(&mut rng);
        assert!(best_response_gap(&g, &far, 1e-9).unwrap() > 1e-3);
    }

    #[test]
    fn single_player_gap_is_suboptimality() {
        let g = single_parabola(1.0, 6.0);
        let a = JointVector::new(1, 1, vec![3.0]).unwrap();
        // J(3) - J(1) = 9 - 1
        let gap = best_response_gap(&g, &a, 1e-10).unwrap();
        assert!((gap - 8.0).abs() < 1e-8, "gap {gap}");
    }

    #[test]
    fn gap_rejects_infeasible_point() {
        let g = single_parabola(1.0, 6.0);
        let a = JointVector::new(1, 1, vec![0.0]).unwrap();
        assert!(best_response_gap(&g, &a, 1e-8).is_err());
    }

    #[test]
    fn two_starts_agree_on_strongly_monotone_instance() {
        let g = random_instance(5, &InstanceSpec::default()).unwrap();
        let step = STEP_FRACTION / g.check_assumptions().lipschitz_estimate;
        let map = |a: &JointVector| g.game_mapping(a);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s1 = g.action_sets().sample(&mut rng);
        let s2 = g.action_sets().sample(&mut rng);
        let a = solve_vi_extragradient(map, g.action_sets(), &s1, step, 1e-12, 100_000).unwrap();
        let b = solve_vi_extragradient(map, g.action_sets(), &s2, step, 1e-12, 100_000).unwrap();
        assert!(a.a_star.distance(&b.a_star) <= 1e-8);
    }

    #[test]
    fn multistart_clusters_a_continuum() {
        // M = 0 on a box: every point solves the VI, so starts stay distinct.
        let sets = ProductSet::new(vec![BoxSet::new(2, 0.0, 1.0).unwrap().into()]).unwrap();
        let zero = |a: &JointVector| Ok(JointVector::zeros(a.players(), a.dim()).unwrap());
        let sols = solve_vi_multistart(zero, &sets, 0.5, 1e-10, 100, 8, 3).unwrap();
        assert_eq!(sols.len(), 8);
    }

    #[test]
    fn pseudo_monotone_sampler() {
        let g = random_instance(1, &InstanceSpec::default()).unwrap();
        let rep = check_pseudo_monotone_sampled(|a: &JointVector| g.game_mapping(a), g.action_sets(), 2000, 2)
            .unwrap();
        assert_eq!(rep.violations, 0);

        let sets = ProductSet::new(vec![BoxSet::new(2, -1.0, 1.0).unwrap().into()]).unwrap();
        let anti = |a: &JointVector| {
            let neg: Vec<f64> = a.as_slice().iter().map(|v| -v).collect();
            JointVector::new(a.players(), a.dim(), neg)
        };
        assert!(check_pseudo_monotone_sampled(anti, &sets, 2000, 2).unwrap().violations > 0);
        assert_eq!(check_pseudo_monotone_sampled(anti, &sets, 0, 2).unwrap().violations, 0);
    }

    #[test]
    fn budget_only_game_equilibrium_is_feasible() {
        let sets = ProductSet::new(vec![
            BoxBudgetSet::new(3, 6.0, 4.0).unwrap().into(),
            BoxBudgetSet::new(3, 6.0, 2.0).unwrap().into(),
        ])
        .unwrap();
        let g = QuadraticAggregativeGame::identity(
            vec![DVector::from_vec(vec![1.0, 2.0, 3.0]), DVector::from_vec(vec![3.0, 0.0, 1.0])],
            sets,
        )
        .unwrap();
        let sol = &solve_quadratic_game(&g, 1e-11, 100_000, 0).unwrap()[0];
        assert!(g.action_sets().distance(&sol.a_star).unwrap() <= 1e-12);
        assert!(best_response_gap(&g, &sol.a_star, 1e-10).unwrap() <= 1e-8);
    }
}
