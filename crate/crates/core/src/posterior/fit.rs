use rand::Rng;
use rand_distr::{Distribution as _, Gamma as GammaSampler, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use super::special::{bessel_i0e, bessel_i1e, ln_bessel_i0, trigamma};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Asymptotic 5% Kolmogorov-Smirnov coefficient.
pub const KS_C_05: f64 = 1.358;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Gamma,
    Rician,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Gaussian, Family::Gamma, Family::Rician];

    pub fn positive_support(self) -> bool {
        !matches!(self, Family::Gaussian)
    }
}

/// A two-parameter distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Gaussian { mu: f64, sigma: f64 },
    /// Shape and scale.
    Gamma { alpha: f64, beta: f64 },
    Rician { s: f64, sigma: f64 },
}

impl Distribution {
    pub fn family(&self) -> Family {
        match self {
            Self::Gaussian { .. } => Family::Gaussian,
            Self::Gamma { .. } => Family::Gamma,
            Self::Rician { .. } => Family::Rician,
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mu, sigma } => {
                let z = (x - mu) / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Self::Gamma { alpha, beta } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (alpha - 1.0) * x.ln() - x / beta - ln_gamma(alpha) - alpha * beta.ln()
            }
            Self::Rician { s, sigma } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let v = sigma * sigma;
                x.ln() - v.ln() - (x * x + s * s) / (2.0 * v) + ln_bessel_i0(x * s / v)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mu, sigma } => {
                let z = (x - mu) / (sigma * std::f64::consts::SQRT_2);
                if z > 0.0 {
                    1.0 - 0.5 * erfc(z)
                } else {
                    0.5 * erfc(-z)
                }
            }
            Self::Gamma { alpha, beta } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(alpha, x / beta)
                }
            }
            Self::Rician { s, sigma } => rician_cdf(x, s, sigma),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gaussian { mu, .. } => mu,
            Self::Gamma { alpha, beta } => alpha * beta,
            Self::Rician { s, sigma } => {
                let nu = s * s / (2.0 * sigma * sigma);
                // sigma sqrt(pi/2) L_{1/2}(-nu)
                let h = 0.5 * nu;
                sigma * (std::f64::consts::PI / 2.0).sqrt() * ((1.0 + nu) * bessel_i0e(h) + nu * bessel_i1e(h))
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma, .. } => sigma * sigma,
            Self::Gamma { alpha, beta } => alpha * beta * beta,
            Self::Rician { s, sigma } => {
                let m = self.mean();
                2.0 * sigma * sigma + s * s - m * m
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian { mu, sigma } => mu + sigma * rng.sample::<f64, _>(StandardNormal),
            Self::Gamma { alpha, beta } => GammaSampler::new(alpha, beta).expect("valid gamma").sample(rng),
            Self::Rician { s, sigma } => {
                let a = s + sigma * rng.sample::<f64, _>(StandardNormal);
                let b = sigma * rng.sample::<f64, _>(StandardNormal);
                a.hypot(b)
            }
        }
    }

    /// Parameter pairs by name.
    pub fn params(&self) -> [(&'static str, f64); 2] {
        match *self {
            Self::Gaussian { mu, sigma } => [("mu", mu), ("sigma", sigma)],
            Self::Gamma { alpha, beta } => [("alpha", alpha), ("beta", beta)],
            Self::Rician { s, sigma } => [("s", s), ("sigma", sigma)],
        }
    }
}

/// Poisson mixture of regularized incomplete gamma functions.
fn rician_cdf(x: f64, s: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let v = 2.0 * sigma * sigma;
    let lambda = s * s / v;
    let y = x * x / v;
    if lambda == 0.0 {
        return -(-y).exp_m1();
    }
    let j_max = (lambda + 12.0 * lambda.sqrt() + 30.0).ceil() as usize;
    // P(1, y) = 1 - e^-y; P(a + 1, y) = P(a, y) - y^a e^-y / Gamma(a + 1)
    let mut p = -(-y).exp_m1();
    let ln_y = y.ln();
    let mut total = 0.0;
    for j in 0..=j_max {
        let ln_w = -lambda + j as f64 * lambda.ln() - ln_gamma(j as f64 + 1.0);
        total += ln_w.exp() * p.max(0.0);
        let a = j as f64 + 1.0;
        p -= (a * ln_y - y - ln_gamma(a + 1.0)).exp();
    }
    total.clamp(0.0, 1.0)
}

/// A fitted family with its goodness-of-fit result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedDistribution {
    pub dist: Distribution,
    pub log_likelihood: f64,
    pub ks_statistic: f64,
    pub ks_accepted_at_5pct: bool,
}

fn check_positive(samples: &[f64], family: Family) -> Result<()> {
    if family.positive_support() {
        if let Some(bad) = samples.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{family:?} needs strictly positive samples, found {bad}"
            )));
        }
    }
    Ok(())
}

/// Maximum-likelihood fit followed by a one-sample KS test.
pub fn fit_distribution(samples: &[f64], family: Family) -> Result<FittedDistribution> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("at least 10 samples needed, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("samples contain non-finite values".into()));
    }
    check_positive(samples, family)?;
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if !(var > 0.0) {
        return Err(Error::InvalidInput("samples have zero variance".into()));
    }
    let dist = match family {
        Family::Gaussian => Distribution::Gaussian { mu: mean, sigma: var.sqrt() },
        Family::Gamma => {
            let mean_ln = samples.iter().map(|v| v.ln()).sum::<f64>() / nf;
            let alpha = gamma_shape(mean.ln() - mean_ln)?;
            Distribution::Gamma { alpha, beta: mean / alpha }
        }
        Family::Rician => fit_rician(samples)?,
    };
    let log_likelihood = samples.iter().map(|&x| dist.ln_pdf(x)).sum();
    let (d, ok) = ks_test(samples, &dist)?;
    Ok(FittedDistribution { dist, log_likelihood, ks_statistic: d, ks_accepted_at_5pct: ok })
}

/// Solves `ln a - digamma(a) = s` by Newton's method.
fn gamma_shape(s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Numerical("degenerate gamma fit (log-mean gap not positive)".into()));
    }
    let mut a = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..100 {
        let f = a.ln() - digamma(a) - s;
        let df = 1.0 / a - trigamma(a);
        let mut next = a - f / df;
        if !(next > 0.0) {
            next = 0.5 * a;
        }
        if (next - a).abs() <= 1e-12 * a {
            return Ok(next);
        }
        a = next;
    }
    Ok(a)
}

fn fit_rician(samples: &[f64]) -> Result<Distribution> {
    let n = samples.len() as f64;
    let m2 = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = samples.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let s2 = (2.0 * m2 * m2 - m4).max(0.0).sqrt();
    let s0 = s2.sqrt().max(1e-3 * m2.sqrt());
    let v0 = (0.5 * (m2 - s2)).max(1e-6 * m2);
    let nll = |z: &[f64]| {
        let d = Distribution::Rician { s: z[0].exp(), sigma: z[1].exp() };
        -samples.iter().map(|&x| d.ln_pdf(x)).sum::<f64>()
    };
    let opts = NelderMeadOptions { max_iter: 4000, ftol: 1e-13, step: 0.2 };
    let mut best = nelder_mead(nll, &[s0.ln(), 0.5 * v0.ln()], &opts);
    // one restart from the optimum to shake off a collapsed simplex
    let again = nelder_mead(nll, &best.x.clone(), &opts);
    if again.f <= best.f {
        best = again;
    }
    if !best.f.is_finite() {
        return Err(Error::Numerical("Rician likelihood did not converge".into()));
    }
    Ok(Distribution::Rician { s: best.x[0].exp(), sigma: best.x[1].exp() })
}

/// `D_N = sup |F_emp - F|` and whether it falls below `1.358 / sqrt(N)`.
pub fn ks_test(samples: &[f64], dist: &Distribution) -> Result<(f64, bool)> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("KS test needs at least 10 samples, got {n}")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = dist.cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let d = d.clamp(0.0, 1.0);
    Ok((d, d < KS_C_05 / nf.sqrt()))
}

/// Fits every admissible family and returns them best log-likelihood first.
pub fn fit_best(samples: &[f64]) -> Result<Vec<FittedDistribution>> {
    let positive = samples.iter().all(|v| *v > 0.0);
    let mut fits: Vec<FittedDistribution> = Family::ALL
        .iter()
        .filter(|f| positive || !f.positive_support())
        .filter_map(|&f| fit_distribution(samples, f).ok())
        .collect();
    if fits.is_empty() {
        return Err(Error::Numerical("no distribution family could be fitted".into()));
    }
    fits.sort_by(|a, b| b.log_likelihood.total_cmp(&a.log_likelihood));
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_cdf_reference() {
        let d = Distribution::Gaussian { mu: 0.0, sigma: 1.0 };
        assert!((d.cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((d.cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12, "{}", d.cdf(1.96));
    }

    #[test]
    fn rician_reduces_to_rayleigh() {
        let d = Distribution::Rician { s: 0.0, sigma: 2.0 };
        for x in [0.5, 1.0, 3.0] {
            assert!((d.cdf(x) - (1.0 - (-x * x / 8.0f64).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn rician_cdf_matches_quadrature() {
        let d = Distribution::Rician { s: 0.5709, sigma: 0.2218 };
        for x in [0.2, 0.5, 0.8, 1.2] {
            let n = 20_000;
            let h = x / n as f64;
            let mut q = 0.0;
            for i in 0..n {
                let t = (i as f64 + 0.5) * h;
                q += d.pdf(t) * h;
            }
            assert!((q - d.cdf(x)).abs() < 1e-7, "x={x}: {q} vs {}", d.cdf(x));
        }
        let far = Distribution::Rician { s: 50.0, sigma: 1.0 };
        assert!((far.cdf(50.0) - 0.5).abs() < 0.01);
    }

    #[test]
    fn analytic_means_match_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [
            Distribution::Gaussian { mu: 1.4110, sigma: 0.1833 },
            Distribution::Gamma { alpha: 12.6511, beta: 0.0975 },
            Distribution::Rician { s: 0.5709, sigma: 0.2218 },
        ] {
            let n = 1_000_000;
            let m = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
            assert!((m - d.mean()).abs() <= 0.005 * d.mean(), "{d:?}: {m} vs {}", d.mean());
        }
    }

    #[test]
    fn nonpositive_samples_rejected() {
        let mut v = vec![1.0; 20];
        v[3] = 0.0;
        assert!(fit_distribution(&v, Family::Gamma).is_err());
        assert!(fit_distribution(&v, Family::Rician).is_err());
    }

    #[test]
    fn gross_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (d, ok) = ks_test(&x, &Distribution::Gaussian { mu: 5.0, sigma: 1.0 }).unwrap();
        assert!(!ok && d > 0.9 && d <= 1.0);
        assert!(ks_test(&x[..9], &Distribution::Gaussian { mu: 0.0, sigma: 1.0 }).is_err());
    }
}
