//! Generalized extreme value distribution.
//!
//! Parameterized by shape ξ, location μ and scale σ > 0 with
//! `t(x) = (1 + ξ (x-μ)/σ)^(-1/ξ)` (and `t(x) = exp(-(x-μ)/σ)` at ξ = 0),
//! `F(x) = exp(-t(x))`, `f(x) = t(x)^(ξ+1) exp(-t(x)) / σ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optimize::{nelder_mead, NelderMeadOptions};
use super::StatsError;

/// Below this |ξ| the Gumbel branch is used.
const GUMBEL_EPS: f64 = 1e-12;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub shape: f64,
    pub loc: f64,
    pub scale: f64,
}

impl GevParams {
    pub fn new(shape: f64, loc: f64, scale: f64) -> Result<Self, StatsError> {
        let p = Self { shape, loc, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if !self.shape.is_finite() || !self.loc.is_finite() {
            return Err(StatsError::InvalidParams("shape and loc must be finite".into()));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(StatsError::InvalidParams(format!(
                "scale must be > 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    fn is_gumbel(&self) -> bool {
        self.shape.abs() < GUMBEL_EPS
    }

    /// ln t(x), or `None` outside the support.
    fn ln_t(&self, x: f64) -> Option<f64> {
        let z = (x - self.loc) / self.scale;
        if self.is_gumbel() {
            return Some(-z);
        }
        let s = self.shape * z;
        if s <= -1.0 {
            return None;
        }
        Some(-s.ln_1p() / self.shape)
    }

    /// Lower and upper support bounds (infinite where unbounded).
    pub fn support(&self) -> (f64, f64) {
        if self.is_gumbel() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.shape > 0.0 {
            (self.loc - self.scale / self.shape, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, self.loc - self.scale / self.shape)
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        self.ln_t(x).is_some()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self.ln_t(x) {
            Some(lt) => -self.scale.ln() + (self.shape + 1.0) * lt - lt.exp(),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.ln_t(x) {
            Some(lt) => (-lt.exp()).exp(),
            None if self.shape > 0.0 => 0.0,
            None => 1.0,
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64, StatsError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(StatsError::ProbabilityOutOfRange(p));
        }
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        let y = -(-p.ln()).ln();
        if self.is_gumbel() {
            self.loc + self.scale * y
        } else {
            self.loc + self.scale * (self.shape * y).exp_m1() / self.shape
        }
    }

    /// Draw by quantile transform of an open-interval uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(rand_distr::Open01);
        self.quantile_unchecked(u)
    }

    /// Sum of log densities; `-inf` if any sample lies outside the support.
    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        neg_log_likelihood(samples, self.shape, self.loc, self.scale).map_or(f64::NEG_INFINITY, |v| -v)
    }
}

fn neg_log_likelihood(xs: &[f64], shape: f64, loc: f64, scale: f64) -> Option<f64> {
    if !(scale > 0.0) {
        return None;
    }
    let inv = 1.0 / scale;
    let n = xs.len() as f64;
    let mut acc = 0.0;
    if shape.abs() < GUMBEL_EPS {
        for &x in xs {
            let z = (x - loc) * inv;
            acc += z + (-z).exp();
        }
    } else {
        let a = 1.0 + 1.0 / shape;
        let inv_shape = 1.0 / shape;
        for &x in xs {
            let s = shape * (x - loc) * inv;
            if s <= -1.0 {
                return None;
            }
            let l = s.ln_1p();
            acc += a * l + (-l * inv_shape).exp();
        }
    }
    Some(acc + n * scale.ln())
}

#[derive(Clone, Copy, Debug)]
pub struct GevFitOptions {
    pub min_samples: usize,
    /// Relative simplex diameter at convergence.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for GevFitOptions {
    fn default() -> Self {
        Self {
            min_samples: 20,
            tol: 1e-8,
            max_evals: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevFit {
    pub params: GevParams,
    pub log_likelihood: f64,
    /// Feasible starting point derived from probability-weighted moments.
    pub initial: GevParams,
    pub initial_log_likelihood: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Probability-weighted-moment estimate (Hosking, Wallis & Wood), used as the
/// MLE starting point. Assumes at least three finite samples.
pub fn pwm_initial_guess(samples: &[f64]) -> GevParams {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (j, &x) in xs.iter().enumerate() {
        let j = j as f64;
        b0 += x;
        b1 += x * j / (n - 1.0);
        b2 += x * j * (j - 1.0) / ((n - 1.0) * (n - 2.0));
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;

    let c = (2.0 * b1 - b0) / (3.0 * b2 - b0) - 2f64.ln() / 3f64.ln();
    // Hosking's k is -ξ.
    let mut k = 7.8590 * c + 2.9554 * c * c;
    if !k.is_finite() {
        k = 0.0;
    }
    k = k.clamp(-0.9, 0.9);
    let l2 = 2.0 * b1 - b0;
    let (scale, loc) = if k.abs() < 1e-6 {
        let scale = l2 / 2f64.ln();
        (scale, b0 - EULER_GAMMA * scale)
    } else {
        let g = statrs::function::gamma::gamma(1.0 + k);
        let scale = l2 * k / (g * (1.0 - 2f64.powf(-k)));
        (scale, b0 + scale * (g - 1.0) / k)
    };
    let scale = if scale > 0.0 && scale.is_finite() {
        scale
    } else {
        // Fall back to the Gumbel moment scale.
        sample_std(&xs) * 6f64.sqrt() / std::f64::consts::PI
    };
    GevParams {
        shape: -k,
        loc,
        scale,
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Maximum-likelihood GEV fit with default options.
pub fn fit_gev_mle(samples: &[f64]) -> Result<GevFit, StatsError> {
    fit_gev_mle_with(samples, GevFitOptions::default())
}

/// Maximum-likelihood GEV fit: Nelder-Mead over (ξ, μ, ln σ) starting from
/// the PWM estimate. Off-support parameter vectors score `-inf`.
pub fn fit_gev_mle_with(samples: &[f64], opts: GevFitOptions) -> Result<GevFit, StatsError> {
    let min = opts.min_samples.max(3);
    if samples.len() < min {
        return Err(StatsError::TooFewSamples {
            got: samples.len(),
            min,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let first = samples[0];
    if samples.iter().all(|&x| x == first) {
        return Err(StatsError::ZeroVariance);
    }

    let mut init = pwm_initial_guess(samples);
    // Pull the shape toward the always-feasible Gumbel case until every sample
    // is inside the support.
    let mut ll0 = init.log_likelihood(samples);
    while !ll0.is_finite() {
        init.shape *= 0.5;
        if init.shape.abs() < 1e-6 {
            init.shape = 0.0;
        }
        ll0 = init.log_likelihood(samples);
        if init.shape == 0.0 && !ll0.is_finite() {
            return Err(StatsError::NonFinite);
        }
    }

    let objective = |p: &[f64]| {
        neg_log_likelihood(samples, p[0], p[1], p[2].exp()).unwrap_or(f64::INFINITY)
    };
    let x0 = [init.shape, init.loc, init.scale.ln()];
    let step = [0.05, 0.1 * init.scale, 0.1];
    let nm = nelder_mead(
        objective,
        &x0,
        &step,
        NelderMeadOptions {
            tol: opts.tol,
            max_evals: opts.max_evals,
            restarts: 2,
        },
    );
    let params = GevParams {
        shape: nm.x[0],
        loc: nm.x[1],
        scale: nm.x[2].exp(),
    };
    params.validate()?;
    Ok(GevFit {
        params,
        log_likelihood: -nm.fx,
        initial: init,
        initial_log_likelihood: ll0,
        evals: nm.evals,
        converged: nm.converged,
    })
}
