//! Monte Carlo checks of the estimator identities behind the learner.
//!
//! For `x ~ N(mu, sigma^2 I)` the score estimator
//! `F_i = J_i(x) (x_i - mu_i) / sigma^2` and the pathwise average of `M(x)`
//! both target the smoothed mapping `M_tilde(mu, sigma)`; the difference
//! `M_tilde - M(mu)` is the smoothing bias `Q`, which shrinks with `sigma`.
//!
//! Sampling is split into fixed chunks, each with its own ChaCha stream, and
//! chunk statistics are merged in chunk order. Results depend only on the seed,
//! never on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{Game, SmoothedMapping};
use crate::joint::{norm, JointVector};

pub const MIN_SAMPLES: usize = 100;
pub const Z_THRESHOLD: f64 = 4.0;
const CHUNK: usize = 16_384;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mc_mean: JointVector,
    pub analytic: JointVector,
    pub std_err: JointVector,
    pub n_samples: usize,
    pub max_z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub sigmas: Vec<f64>,
    /// Monte Carlo estimates of `||Q(mu, sigma)||`.
    pub q_norms: Vec<f64>,
    /// Scale of the error in each `q_norms` entry: `sqrt(sum_k se_k^2)`.
    pub std_errs: Vec<f64>,
    /// Closed-form `||Q||` from the game's smoothed mapping.
    pub exact_norms: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl BiasReport {
    /// Largest `|q - exact| / std_err` over the ladder.
    pub fn max_closed_form_z(&self) -> f64 {
        self.q_norms
            .iter()
            .zip(&self.exact_norms)
            .zip(&self.std_errs)
            .map(|((q, e), s)| z_score(q - e, *s))
            .fold(0.0, f64::max)
    }

    /// Shrinking `sigma` by a factor `r` never grows `||Q||` by more than `r`,
    /// up to `z` standard errors of the smaller-sigma estimate.
    pub fn envelope_holds(&self, z: f64) -> bool {
        (1..self.sigmas.len()).all(|j| {
            let r = self.sigmas[j - 1] / self.sigmas[j];
            self.q_norms[j] <= r * self.q_norms[j - 1] + z * self.std_errs[j]
        })
    }

    /// `max_j ratios[j] / ratios[0]`: growth of `||Q|| / sigma` down the ladder.
    pub fn ratio_growth(&self) -> f64 {
        let first = self.ratios[0];
        self.ratios
            .iter()
            .map(|r| r / first)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff.abs() / se
    } else {
        f64::INFINITY
    }
}

/// Running mean and sum of squared deviations per coordinate.
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, v: &[f64]) {
        self.n += 1.0;
        for ((m, s), x) in self.mean.iter_mut().zip(&mut self.m2).zip(v) {
            let delta = x - *m;
            *m += delta / self.n;
            *s += delta * (x - *m);
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * other.n / n;
            self.m2[k] += other.m2[k] + delta * delta * self.n * other.n / n;
        }
        self.n = n;
        self
    }

    fn std_err(&self) -> Vec<f64> {
        let denom = (self.n - 1.0).max(1.0);
        self.m2.iter().map(|s| (s / denom / self.n).sqrt()).collect()
    }
}

/// Averages `f(x)` over `n` draws of `x ~ N(mu, sigma^2 I)`.
fn gaussian_average<F>(
    mu: &JointVector,
    sigma: f64,
    n: usize,
    seed: u64,
    f: F,
) -> Result<(JointVector, JointVector)>
where
    F: Fn(&JointVector, &mut [f64]) -> Result<()> + Sync,
{
    let len = mu.len();
    let chunks = n.div_ceil(CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Moments> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            let mut acc = Moments::new(len);
            let mut x = mu.clone();
            let mut out = vec![0.0; len];
            for _ in 0..count {
                for (xi, m) in x.as_mut_slice().iter_mut().zip(mu.as_slice()) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *xi = m + sigma * z;
                }
                f(&x, &mut out)?;
                acc.push(&out);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = partials
        .iter()
        .fold(Moments::new(len), |acc, p| acc.merge(p));
    let mean = JointVector::new(mu.players(), mu.dim(), total.mean.clone())?;
    let se = JointVector::new(mu.players(), mu.dim(), total.std_err())?;
    Ok((mean, se))
}

fn check_inputs(mu: &JointVector, sigma: f64, n_samples: usize) -> Result<()> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples for a meaningful standard error, got {n_samples}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    mu.ensure_finite("mean vector")
}

fn report(mc_mean: JointVector, std_err: JointVector, analytic: JointVector, n: usize) -> EstimatorReport {
    let max_z_score = mc_mean
        .as_slice()
        .iter()
        .zip(analytic.as_slice())
        .zip(std_err.as_slice())
        .map(|((m, a), s)| z_score(m - a, *s))
        .fold(0.0, f64::max);
    EstimatorReport {
        mc_mean,
        analytic,
        std_err,
        n_samples: n,
        max_z_score,
    }
}

/// Monte Carlo mean of the score estimator `J_i(x) (x_i - mu_i) / sigma^2`
/// against the closed-form smoothed mapping.
pub fn score_estimator_check<G>(
    game: &G,
    mu: &JointVector,
    sigma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<EstimatorReport>
where
    G: Game + SmoothedMapping + ?Sized,
{
    check_inputs(mu, sigma, n_samples)?;
    let analytic = game.smoothed_mapping(mu, sigma)?;
    let d = mu.dim();
    let inv_var = 1.0 / (sigma * sigma);
    let (mean, se) = gaussian_average(mu, sigma, n_samples, seed, |x, out| {
        let costs = game.costs(x)?;
        for (i, cost) in costs.iter().enumerate() {
            for k in 0..d {
                let idx = i * d + k;
                out[idx] = cost * (x.as_slice()[idx] - mu.as_slice()[idx]) * inv_var;
            }
        }
        Ok(())
    })?;
    Ok(report(mean, se, analytic, n_samples))
}

/// Pathwise estimate of the smoothed mapping: Monte Carlo mean of `M(x)`.
pub fn mixed_mapping_mc<G>(
    game: &G,
    mu: &JointVector,
    sigma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<EstimatorReport>
where
    G: Game + SmoothedMapping + ?Sized,
{
    check_inputs(mu, sigma, n_samples)?;
    let analytic = game.smoothed_mapping(mu, sigma)?;
    let (mean, se) = gaussian_average(mu, sigma, n_samples, seed, |x, out| {
        out.copy_from_slice(game.game_mapping(x)?.as_slice());
        Ok(())
    })?;
    Ok(report(mean, se, analytic, n_samples))
}

/// Largest coordinate gap between two independent estimates of the same
/// quantity, in units of their combined standard error.
pub fn dual_estimator_z(a: &EstimatorReport, b: &EstimatorReport) -> f64 {
    a.mc_mean
        .as_slice()
        .iter()
        .zip(b.mc_mean.as_slice())
        .zip(a.std_err.as_slice().iter().zip(b.std_err.as_slice()))
        .map(|((x, y), (sa, sb))| z_score(x - y, (sa * sa + sb * sb).sqrt()))
        .fold(0.0, f64::max)
}

/// Estimates `||M_tilde(mu, sigma) - M(mu)||` along a decreasing `sigmas`
/// ladder, using the pathwise estimator of `M(x) - M(mu)`.
pub fn bias_scaling_check<G>(
    game: &G,
    mu: &JointVector,
    sigmas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<BiasReport>
where
    G: Game + SmoothedMapping + ?Sized,
{
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("sigma ladder is empty".into()));
    }
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("sigma ladder must be strictly decreasing".into()));
    }
    let at_mean = game.game_mapping(mu)?;
    let mut out = BiasReport {
        sigmas: sigmas.to_vec(),
        q_norms: Vec::with_capacity(sigmas.len()),
        std_errs: Vec::with_capacity(sigmas.len()),
        exact_norms: Vec::with_capacity(sigmas.len()),
        ratios: Vec::with_capacity(sigmas.len()),
    };
    for &sigma in sigmas {
        check_inputs(mu, sigma, n_samples)?;
        let (mean, se) = gaussian_average(mu, sigma, n_samples, seed, |x, buf| {
            let m = game.game_mapping(x)?;
            for ((b, v), c) in buf.iter_mut().zip(m.as_slice()).zip(at_mean.as_slice()) {
                *b = v - c;
            }
            Ok(())
        })?;
        let exact = game.smoothed_mapping(mu, sigma)?.sub(&at_mean);
        let q = mean.norm();
        out.q_norms.push(q);
        out.std_errs.push(norm(se.as_slice()));
        out.exact_norms.push(exact.norm());
        out.ratios.push(q / sigma);
    }
    Ok(out)
}
