//! Uniform priors, diagonal Gaussian likelihoods and the adaptive Metropolis
//! sampler.

mod sampler;

use serde::{Deserialize, Serialize};

pub use sampler::{
    adaptive_metropolis, autocorrelation, effective_sample_size, postprocess_chain, AdaptConfig, ChainSummary,
    PosteriorChain,
};

use crate::error::{Error, Result};
use crate::modular_bayes::{PriorSpec, SiteEmulator};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LikelihoodMode {
    /// Residuals corrected by the discrepancy emulator.
    #[default]
    #[serde(rename = "withbias")]
    WithBias,
    #[serde(rename = "nobias")]
    NoBias,
}

impl std::str::FromStr for LikelihoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "withbias" => Ok(Self::WithBias),
            "nobias" => Ok(Self::NoBias),
            other => Err(Error::Config(format!("unknown likelihood mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for LikelihoodMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::WithBias => "withbias",
            Self::NoBias => "nobias",
        })
    }
}

/// Emulated simulator output at every inverse-UQ test, stacked test-major.
pub trait CodePredictor: Sync {
    /// Returns `(mean, variance)` for a parameter vector.
    fn predict(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl<F> CodePredictor for F
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    fn predict(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self(theta)
    }
}

impl CodePredictor for SiteEmulator<'_> {
    fn predict(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.evaluate(theta, true)
    }
}

/// Observations and variance terms of the calibration likelihood.
pub struct LikelihoodContext<'a> {
    pub y_obs: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma_exp: Vec<f64>,
    pub sigma_bias: Vec<f64>,
    pub code: &'a dyn CodePredictor,
    /// Fixed emulator variance used instead of the per-call one.
    pub frozen_code_variance: Option<Vec<f64>>,
}

impl<'a> LikelihoodContext<'a> {
    pub fn new(
        y_obs: Vec<f64>,
        delta: Vec<f64>,
        sigma_exp: Vec<f64>,
        sigma_bias: Vec<f64>,
        code: &'a dyn CodePredictor,
    ) -> Result<Self> {
        let n = y_obs.len();
        for (name, v) in [("delta", &delta), ("sigma_exp", &sigma_exp), ("sigma_bias", &sigma_bias)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} contains non-finite values")));
            }
        }
        if sigma_exp.iter().chain(&sigma_bias).any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("variances must be nonnegative".into()));
        }
        Ok(Self { y_obs, delta, sigma_exp, sigma_bias, code, frozen_code_variance: None })
    }

    /// Evaluates the emulator variance once at `theta0` and reuses it.
    pub fn freeze_code_variance(&mut self, theta0: &[f64]) -> Result<()> {
        let (_, var) = self.code.predict(theta0)?;
        self.frozen_code_variance = Some(var);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_obs.is_empty()
    }
}

/// Zero inside the open prior box, `-inf` elsewhere.
pub fn log_prior(theta: &[f64], prior: &PriorSpec) -> f64 {
    if prior.contains(theta) {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// `-0.5 * sum r^2 / v - 0.5 * sum ln v` for diagonal variances `v`.
pub fn gaussian_log_likelihood(resid: &[f64], var: &[f64]) -> Result<f64> {
    let mut quad = 0.0;
    let mut logdet = 0.0;
    for (i, (r, v)) in resid.iter().zip(var).enumerate() {
        if !(*v > 0.0) {
            return Err(Error::Numerical(format!("total variance entry {i} is not positive ({v})")));
        }
        quad += r * r / v;
        logdet += v.ln();
    }
    Ok(-0.5 * quad - 0.5 * logdet)
}

pub fn log_likelihood(theta: &[f64], ctx: &LikelihoodContext<'_>, mode: LikelihoodMode) -> Result<f64> {
    let (mean, code_var) = ctx.code.predict(theta)?;
    let n = ctx.len();
    if mean.len() != n || code_var.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: mean.len() });
    }
    let code_var = ctx.frozen_code_variance.as_ref().unwrap_or(&code_var);
    let (resid, var): (Vec<f64>, Vec<f64>) = match mode {
        LikelihoodMode::WithBias => (0..n)
            .map(|i| {
                (
                    ctx.y_obs[i] - mean[i] - ctx.delta[i],
                    ctx.sigma_exp[i] + ctx.sigma_bias[i] + code_var[i],
                )
            })
            .unzip(),
        LikelihoodMode::NoBias => (0..n)
            .map(|i| (ctx.y_obs[i] - mean[i], ctx.sigma_exp[i] + code_var[i]))
            .unzip(),
    };
    gaussian_log_likelihood(&resid, &var)
}

/// Unnormalized log posterior; failures inside the prior box count as `-inf`.
pub fn log_posterior(theta: &[f64], ctx: &LikelihoodContext<'_>, prior: &PriorSpec, mode: LikelihoodMode) -> f64 {
    let lp = log_prior(theta, prior);
    if !lp.is_finite() {
        return lp;
    }
    match log_likelihood(theta, ctx, mode) {
        Ok(ll) if ll.is_finite() => lp + ll,
        Ok(_) => f64::NEG_INFINITY,
        Err(e) => {
            log::debug!("likelihood failed at {theta:?}: {e}");
            f64::NEG_INFINITY
        }
    }
}
