use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modular_bayes::PriorSpec;

/// Proposal settings for [`adaptive_metropolis`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Iterations with the fixed diagonal proposal before adapting.
    pub warmup: usize,
    /// Per-dimension std of the fixed proposal.
    pub init_std: Vec<f64>,
    /// Diagonal regularization added to the adapted covariance.
    pub eps: f64,
    /// Scale on the empirical covariance; `2.38^2 / p` when unset.
    pub scale: Option<f64>,
    /// When false the fixed proposal is used throughout.
    pub adapt: bool,
}

impl AdaptConfig {
    /// Warm-up std as `frac` of each prior range, `eps = 1e-6 * mean(range^2)`.
    pub fn for_prior(prior: &PriorSpec, frac: f64, warmup: usize) -> Self {
        Self::for_ranges(&prior.ranges(), frac, warmup)
    }

    pub fn for_ranges(ranges: &[f64], frac: f64, warmup: usize) -> Self {
        let p = ranges.len().max(1) as f64;
        Self {
            warmup,
            init_std: ranges.iter().map(|r| frac * r).collect(),
            eps: 1e-6 * ranges.iter().map(|r| r * r).sum::<f64>() / p,
            scale: None,
            adapt: true,
        }
    }

    /// Non-adaptive random walk with the given per-dimension std.
    pub fn fixed(std: Vec<f64>) -> Self {
        Self { warmup: 0, init_std: std, eps: 0.0, scale: None, adapt: false }
    }
}

/// Raw output of one chain.
#[derive(Clone, Debug)]
pub struct PosteriorChain {
    /// One row per iteration.
    pub samples: DMatrix<f64>,
    pub log_posts: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub n_samples: usize,
    pub acceptance_rate: f64,
    /// Acceptance over the iterations after warm-up.
    pub adapted_acceptance_rate: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_retained: usize,
    pub ess: Vec<f64>,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Acceptance rate over iterations `from..`.
    pub fn acceptance_after(&self, from: usize) -> f64 {
        let tail = &self.accepted[from.min(self.accepted.len())..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|a| **a).count() as f64 / tail.len() as f64
    }

    /// Retained samples after dropping `self.burn_in` and thinning by `self.thin`.
    pub fn retained(&self) -> Result<DMatrix<f64>> {
        postprocess_chain(self, self.burn_in, self.thin)
    }

    pub fn summary(&self, warmup: usize) -> Result<ChainSummary> {
        let kept = self.retained()?;
        let ess = (0..kept.ncols())
            .map(|k| effective_sample_size(&kept.column(k).iter().copied().collect::<Vec<_>>()))
            .collect();
        Ok(ChainSummary {
            n_samples: self.len(),
            acceptance_rate: self.acceptance_rate,
            adapted_acceptance_rate: self.acceptance_after(warmup),
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            n_retained: kept.nrows(),
            ess,
        })
    }

    /// Header `iter,theta1..thetap,log_post,accepted`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("theta{k}")));
        header.push("log_post".into());
        header.push("accepted".into());
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.samples.row(i).iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.log_posts[i]));
            rec.push(u8::from(self.accepted[i]).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a chain written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: std::io::Read>(r: R, seed: u64, burn_in: usize, thin: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let width = rd.headers()?.len();
        if width < 4 {
            return Err(Error::Data("chain CSV needs iter, parameters, log_post and accepted".into()));
        }
        let p = width - 3;
        let mut vals = Vec::new();
        let mut lps = Vec::new();
        let mut acc = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| {
                rec[c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("chain row {}: bad value `{}`", row + 2, &rec[c])))
            };
            for c in 1..=p {
                vals.push(num(c)?);
            }
            lps.push(num(p + 1)?);
            acc.push(rec[p + 2].trim() == "1");
        }
        let n = lps.len();
        let rate = acc.iter().filter(|a| **a).count() as f64 / n.max(1) as f64;
        Ok(Self {
            samples: DMatrix::from_row_slice(n, p, &vals),
            log_posts: lps,
            accepted: acc,
            acceptance_rate: rate,
            burn_in,
            thin,
            seed,
        })
    }
}

/// Running mean and covariance.
struct Moments {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Moments {
    fn new(p: usize) -> Self {
        Self { n: 0.0, mean: DVector::zeros(p), m2: DMatrix::zeros(p, p) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1.0;
        let d = x - &self.mean;
        self.mean += &d / self.n;
        let d2 = x - &self.mean;
        self.m2 += &d * d2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        if self.n < 2.0 {
            return DMatrix::zeros(self.mean.len(), self.mean.len());
        }
        &self.m2 / (self.n - 1.0)
    }
}

/// Random-walk Metropolis whose Gaussian proposal switches, after a warm-up,
/// to a scaled running covariance of the chain history.
pub fn adaptive_metropolis<F>(
    mut log_post: F,
    init: &[f64],
    n_samples: usize,
    seed: u64,
    cfg: &AdaptConfig,
) -> Result<PosteriorChain>
where
    F: FnMut(&[f64]) -> f64,
{
    let p = init.len();
    if p == 0 || cfg.init_std.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: cfg.init_std.len() });
    }
    if n_samples < 1000 {
        return Err(Error::InvalidInput(format!("at least 1000 samples required, got {n_samples}")));
    }
    let mut lp = log_post(init);
    if !lp.is_finite() {
        return Err(Error::InvalidInput("log posterior is not finite at the initial point".into()));
    }
    let scale = cfg.scale.unwrap_or(2.38 * 2.38 / p as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::from_column_slice(init);
    let mut moments = Moments::new(p);
    let mut samples = DMatrix::zeros(n_samples, p);
    let mut log_posts = Vec::with_capacity(n_samples);
    let mut accepted = Vec::with_capacity(n_samples);
    let mut n_acc = 0usize;
    let mut chol_l: Option<DMatrix<f64>> = None;
    let mut z = DVector::zeros(p);
    let mut prop = vec![0.0; p];

    for t in 0..n_samples {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let adapting = cfg.adapt && t >= cfg.warmup && moments.n >= 2.0;
        if adapting {
            let mut c = moments.covariance() * scale;
            for k in 0..p {
                c[(k, k)] += cfg.eps;
            }
            if let Some(ch) = c.cholesky() {
                chol_l = Some(ch.unpack());
            }
        }
        match (&chol_l, adapting) {
            (Some(l), true) => {
                let step = l * &z;
                for k in 0..p {
                    prop[k] = x[k] + step[k];
                }
            }
            _ => {
                for k in 0..p {
                    prop[k] = x[k] + cfg.init_std[k] * z[k];
                }
            }
        }
        let lp_new = log_post(&prop);
        let u: f64 = rng.random();
        let ok = lp_new.is_finite() && u.ln() < lp_new - lp;
        if ok {
            x.copy_from_slice(&prop);
            lp = lp_new;
            n_acc += 1;
        }
        if t + 1 == 2000.min(n_samples) && n_acc == 0 {
            log::warn!("no proposal accepted in the first {} iterations", t + 1);
        }
        samples.set_row(t, &x.transpose());
        log_posts.push(lp);
        accepted.push(ok);
        moments.push(&x);
    }

    Ok(PosteriorChain {
        samples,
        log_posts,
        accepted,
        acceptance_rate: n_acc as f64 / n_samples as f64,
        burn_in: 0,
        thin: 1,
        seed,
    })
}

/// Drops the first `burn_in` rows and keeps every `thin`-th of the rest.
pub fn postprocess_chain(chain: &PosteriorChain, burn_in: usize, thin: usize) -> Result<DMatrix<f64>> {
    if thin == 0 {
        return Err(Error::InvalidInput("thin must be at least 1".into()));
    }
    if burn_in >= chain.len() {
        return Err(Error::InvalidInput(format!(
            "burn-in {burn_in} leaves nothing of a {}-sample chain",
            chain.len()
        )));
    }
    let rows: Vec<usize> = (burn_in..chain.len()).step_by(thin).collect();
    Ok(chain.samples.select_rows(&rows))
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}

/// Effective sample size from Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma = |lag: usize| (0..n - lag).map(|i| c[i] * c[i + lag]).sum::<f64>() / n as f64;
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let mut pair = gamma(2 * m) + gamma(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev {
            pair = prev;
        }
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum / g0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}
