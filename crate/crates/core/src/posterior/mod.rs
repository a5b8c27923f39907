//! Posterior sample analysis: moments, KDE marginals and mode, parametric
//! fits with KS tests, correlations and empirical CDFs.

mod fit;
pub mod special;

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use fit::{fit_best, fit_distribution, ks_test, Distribution, Family, FittedDistribution, KS_C_05};

use crate::error::{Error, Result};

/// Mode grid resolution.
pub const MODE_GRID: usize = 512;

fn column(samples: &DMatrix<f64>, k: usize) -> Vec<f64> {
    samples.column(k).iter().copied().collect()
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.max(0.0).sqrt())
}

/// Per-column sample means and standard deviations (`N - 1` denominator).
pub fn moments(samples: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.nrows() < 2 {
        return Err(Error::InvalidInput("at least two samples are needed".into()));
    }
    Ok((0..samples.ncols()).map(|k| mean_std(&column(samples, k))).unzip())
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::InvalidInput("bandwidth needs at least two samples".into()));
    }
    let (_, sd) = mean_std(x);
    if !(sd > 0.0) {
        return Err(Error::InvalidInput("samples have zero variance".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (x.len() as f64).powf(-0.2))
}

/// Gaussian-kernel density estimate with a fixed bandwidth.
#[derive(Clone, Debug)]
pub struct Kde {
    sorted: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.len() < 10 {
            return Err(Error::InvalidInput(format!("KDE needs at least 10 samples, got {}", samples.len())));
        }
        let bandwidth = silverman_bandwidth(samples)?;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted, bandwidth })
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        // kernel mass beyond 9 bandwidths is below 1e-17
        let lo = self.sorted.partition_point(|v| *v < x - 9.0 * h);
        let hi = self.sorted.partition_point(|v| *v <= x + 9.0 * h);
        let sum: f64 = self.sorted[lo..hi]
            .iter()
            .map(|v| {
                let z = (x - v) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum / (self.sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }
}

/// KDE evaluated on `grid`, which must be sorted.
pub fn kde_density(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("grid must be sorted".into()));
    }
    let kde = Kde::new(samples)?;
    Ok(grid.iter().map(|&g| kde.density(g)).collect())
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Peak of the KDE over a 512-point grid spanning the sample range.
pub fn mode_map(samples: &[f64]) -> Result<f64> {
    let kde = Kde::new(samples)?;
    let grid = linspace(kde.min(), kde.max(), MODE_GRID);
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &g in &grid {
        let d = kde.density(g);
        if d > best.0 {
            best = (d, g);
        }
    }
    Ok(best.1)
}

/// Pearson correlation matrix of the columns.
pub fn correlation_matrix(samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = samples.shape();
    if n < 3 {
        return Err(Error::InvalidInput("correlation needs at least three samples".into()));
    }
    let cols: Vec<Vec<f64>> = (0..p).map(|k| column(samples, k)).collect();
    let centred: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(ss > 0.0) {
                return Err(Error::InvalidInput(format!("column {k} has zero variance")));
            }
            Ok((d, ss))
        })
        .collect::<Result<_>>()?;
    let mut r = DMatrix::identity(p, p);
    for a in 0..p {
        for b in (a + 1)..p {
            let dot: f64 = centred[a].0.iter().zip(&centred[b].0).map(|(x, y)| x * y).sum();
            let v = (dot / (centred[a].1 * centred[b].1)).clamp(-1.0, 1.0);
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    Ok(r)
}

/// Right-continuous empirical distribution function.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empirical CDF of no samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub mean: f64,
    pub std: f64,
    pub mode: f64,
    /// Best fit by log-likelihood, then the other admissible families.
    pub fitted: Vec<FittedDistribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub n_samples: usize,
    pub parameters: BTreeMap<String, ParameterSummary>,
    pub correlation: Vec<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn means(&self) -> Vec<f64> {
        self.names.iter().map(|n| self.parameters[n].mean).collect()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.names.iter().map(|n| self.parameters[n].std).collect()
    }
}

/// Full analysis of retained posterior samples (rows) named by `names`.
pub fn summarize(samples: &DMatrix<f64>, names: &[String]) -> Result<PosteriorSummary> {
    let p = samples.ncols();
    if names.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: names.len() });
    }
    let (means, stds) = moments(samples)?;
    let corr = correlation_matrix(samples)?;
    let mut parameters = BTreeMap::new();
    for k in 0..p {
        let col = column(samples, k);
        parameters.insert(
            names[k].clone(),
            ParameterSummary {
                mean: means[k],
                std: stds[k],
                mode: mode_map(&col)?,
                fitted: fit_best(&col)?,
            },
        );
    }
    Ok(PosteriorSummary {
        names: names.to_vec(),
        n_samples: samples.nrows(),
        parameters,
        correlation: corr.row_iter().map(|r| r.iter().copied().collect()).collect(),
    })
}

/// `param,x,density` over the sample range padded by three bandwidths.
pub fn write_marginals_csv<W: Write>(w: W, samples: &DMatrix<f64>, names: &[String], n_grid: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["param", "x", "density"])?;
    for (k, name) in names.iter().enumerate() {
        let kde = Kde::new(&column(samples, k))?;
        let pad = 3.0 * kde.bandwidth;
        for g in linspace(kde.min() - pad, kde.max() + pad, n_grid) {
            wr.write_record([name.clone(), format!("{g}"), format!("{}", kde.density(g))])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// `param_a,param_b,x,y,density` on an `n_grid` square grid per pair, product
/// Gaussian kernel with per-axis Silverman bandwidths.
pub fn write_pairwise_csv<W: Write>(w: W, samples: &DMatrix<f64>, names: &[String], n_grid: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["param_a", "param_b", "x", "y", "density"])?;
    let n = samples.nrows() as f64;
    let cols: Vec<Vec<f64>> = (0..samples.ncols()).map(|k| column(samples, k)).collect();
    let hs: Vec<f64> = cols.iter().map(|c| silverman_bandwidth(c)).collect::<Result<_>>()?;
    for a in 0..cols.len() {
        for b in (a + 1)..cols.len() {
            let (ha, hb) = (hs[a], hs[b]);
            let range = |c: &[f64], h: f64| {
                let lo = c.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
                let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
                linspace(lo, hi, n_grid)
            };
            let gx = range(&cols[a], ha);
            let gy = range(&cols[b], hb);
            // separable kernel: K[i][g] for each axis
            let kern = |c: &[f64], g: &[f64], h: f64| -> Vec<Vec<f64>> {
                g.iter()
                    .map(|gv| {
                        c.iter()
                            .map(|v| {
                                let z = (gv - v) / h;
                                (-0.5 * z * z).exp()
                            })
                            .collect()
                    })
                    .collect()
            };
            let kx = kern(&cols[a], &gx, ha);
            let ky = kern(&cols[b], &gy, hb);
            let norm = 1.0 / (n * 2.0 * std::f64::consts::PI * ha * hb);
            for (i, x) in gx.iter().enumerate() {
                for (j, y) in gy.iter().enumerate() {
                    let d: f64 = kx[i].iter().zip(&ky[j]).map(|(p, q)| p * q).sum::<f64>() * norm;
                    wr.write_record([
                        names[a].clone(),
                        names[b].clone(),
                        format!("{x}"),
                        format!("{y}"),
                        format!("{d}"),
                    ])?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// `param,x,empirical,fitted` at each sorted sample, using the best fit.
pub fn write_cdf_csv<W: Write>(w: W, samples: &DMatrix<f64>, summary: &PosteriorSummary) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["param", "x", "empirical", "fitted"])?;
    for (k, name) in summary.names.iter().enumerate() {
        let col = column(samples, k);
        let ecdf = empirical_cdf(&col)?;
        let dist = summary.parameters[name].fitted[0].dist;
        let step = (col.len() / 500).max(1);
        for x in ecdf.sorted.iter().step_by(step) {
            wr.write_record([name.clone(), format!("{x}"), format!("{}", ecdf.eval(*x)), format!("{}", dist.cdf(*x))])?;
        }
    }
    wr.flush()?;
    Ok(())
}
