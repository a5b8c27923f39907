//! Gaussian-process regression with an anisotropic squared-exponential kernel
//! and a constant mean.
//!
//! Inputs are mapped to `[0, 1]^d` and outputs standardized before fitting.
//! The constant mean and the signal variance are profiled out in closed form,
//! so only the lengthscales are optimized.

mod likelihood;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use likelihood::{profile_log_likelihood, ProfileFit};

use crate::error::{Error, Result};
use crate::optim::{bfgs, from_box, nelder_mead, to_box, to_box_deriv, BfgsOptions, NelderMeadOptions};

/// Lower bound on the profiled signal variance (standardized units).
const SIGNAL_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Quasi-Newton on the analytic gradient.
    #[default]
    Bfgs,
    NelderMead,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Diagonal jitter relative to the signal variance.
    pub nugget: f64,
    pub n_starts: usize,
    /// Lengthscale search box, in normalized input units.
    pub lengthscale_bounds: (f64, f64),
    pub optimizer: Optimizer,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            nugget: 1e-8,
            n_starts: 10,
            lengthscale_bounds: (1e-2, 1e2),
            optimizer: Optimizer::Bfgs,
            max_iter: 200,
        }
    }
}

/// Affine maps between raw and internal coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalization {
    pub fn from_data(x: &DMatrix<f64>, y: &[f64]) -> Self {
        let (offset, scale) = x
            .column_iter()
            .map(|c| {
                let (lo, hi) = (c.min(), c.max());
                (lo, if hi > lo { hi - lo } else { 1.0 })
            })
            .unzip();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            input_offset: offset,
            input_scale: scale,
            y_mean: mean,
            y_std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.input_offset.len()
    }

    pub fn inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, k| (x[(i, k)] - self.input_offset[k]) / self.input_scale[k])
    }

    pub fn outputs(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(y.len(), y.iter().map(|v| (v - self.y_mean) / self.y_std))
    }
}

/// Hyperparameters in internal units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
    pub mean_const: f64,
}

/// A conditioned Gaussian process, immutable once built.
#[derive(Clone, Debug)]
pub struct GpModel {
    norm: Normalization,
    hyper: Hyperparameters,
    train_x: DMatrix<f64>,
    train_y: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    // row-major train_x / lengthscale
    scaled: Vec<f64>,
    log_likelihood: f64,
}

/// Serialized form of a [`GpModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpDocument {
    pub kernel: String,
    pub normalization: Normalization,
    pub hyperparameters: Hyperparameters,
    /// Raw training inputs, one row per point.
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
}

fn check_data(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyDesign);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("training data contain non-finite values".into()));
    }
    Ok(())
}

/// Maximum-likelihood fit with multi-start local optimization.
pub fn fit(x: &DMatrix<f64>, y: &[f64], cfg: &GpConfig, seed: u64) -> Result<GpModel> {
    check_data(x, y)?;
    let (n, d) = x.shape();
    if n < d + 2 {
        log::warn!("GP fit with {n} points in {d} dimensions; at least {} recommended", d + 2);
    }
    let norm = Normalization::from_data(x, y);
    let z = norm.inputs(x);
    let ys = norm.outputs(y);
    let (lo, hi) = (cfg.lengthscale_bounds.0.ln(), cfg.lengthscale_bounds.1.ln());
    if !(lo < hi) {
        return Err(Error::Config("lengthscale bounds must satisfy 0 < lower < upper".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (slo, shi) = ((0.05f64).ln().max(lo), (5.0f64).ln().min(hi));
    let starts: Vec<Vec<f64>> = (0..cfg.n_starts.max(1))
        .map(|s| {
            (0..d)
                .map(|_| {
                    let v = if s == 0 { (0.5f64).ln().clamp(lo, hi) } else { rng.random_range(slo..=shi) };
                    from_box(v, lo, hi)
                })
                .collect()
        })
        .collect();

    let objective = |zs: &[f64], grad: bool| -> (f64, Vec<f64>) {
        let log_ls: Vec<f64> = zs.iter().map(|&v| to_box(v, lo, hi)).collect();
        match profile_log_likelihood(&z, &ys, &log_ls, cfg.nugget, grad) {
            Some(pf) => {
                let g = if grad {
                    pf.gradient
                        .iter()
                        .zip(zs)
                        .map(|(gk, &v)| -gk * to_box_deriv(v, lo, hi))
                        .collect()
                } else {
                    Vec::new()
                };
                (-pf.log_likelihood, g)
            }
            None => (f64::INFINITY, vec![0.0; zs.len()]),
        }
    };

    let results: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|x0| {
            let m = match cfg.optimizer {
                Optimizer::Bfgs => bfgs(
                    |v| objective(v, true),
                    x0,
                    &BfgsOptions { max_iter: cfg.max_iter, gtol: 1e-5, ftol: 1e-9 },
                ),
                Optimizer::NelderMead => nelder_mead(
                    |v| objective(v, false).0,
                    x0,
                    &NelderMeadOptions { max_iter: cfg.max_iter * 10, ftol: 1e-9, step: 0.5 },
                ),
            };
            log::debug!("gp start: f {:.6} after {} iterations, converged {}", m.f, m.iterations, m.converged);
            (m.f, m.x)
        })
        .collect();

    let mut best: Option<&(f64, Vec<f64>)> = None;
    for r in &results {
        if r.0.is_finite() && best.map_or(true, |b| r.0 < b.0) {
            best = Some(r);
        }
    }
    let Some((_, zbest)) = best else {
        return Err(Error::Numerical(
            "no multi-start produced a positive-definite kernel matrix".into(),
        ));
    };
    let lengthscales: Vec<f64> = zbest.iter().map(|&v| to_box(v, lo, hi).exp()).collect();
    GpModel::condition_internal(norm, z, ys, lengthscales, cfg.nugget)
}

impl GpModel {
    /// Conditions on raw data with fixed lengthscales and normalization; the
    /// mean and signal variance are re-estimated.
    pub fn with_lengthscales(
        x: &DMatrix<f64>,
        y: &[f64],
        norm: Normalization,
        lengthscales: Vec<f64>,
        nugget: f64,
    ) -> Result<Self> {
        check_data(x, y)?;
        if norm.dim() != x.ncols() || lengthscales.len() != x.ncols() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), found: lengthscales.len() });
        }
        let z = norm.inputs(x);
        let ys = norm.outputs(y);
        Self::condition_internal(norm, z, ys, lengthscales, nugget)
    }

    fn condition_internal(
        norm: Normalization,
        z: DMatrix<f64>,
        ys: DVector<f64>,
        lengthscales: Vec<f64>,
        nugget: f64,
    ) -> Result<Self> {
        if lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidInput("lengthscales must be positive".into()));
        }
        let log_ls: Vec<f64> = lengthscales.iter().map(|l| l.ln()).collect();
        let pf = profile_log_likelihood(&z, &ys, &log_ls, nugget, false)
            .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
        let hyper = Hyperparameters {
            lengthscales,
            signal_variance: pf.signal_variance,
            nugget,
            mean_const: pf.mean,
        };
        Self::assemble(norm, hyper, z, ys, Some(pf.log_likelihood))
    }

    fn assemble(
        norm: Normalization,
        hyper: Hyperparameters,
        z: DMatrix<f64>,
        ys: DVector<f64>,
        log_likelihood: Option<f64>,
    ) -> Result<Self> {
        let n = z.nrows();
        let d = z.ncols();
        let r = likelihood::correlation_matrix(&z, &hyper.lengthscales, hyper.nugget);
        let chol = Cholesky::new(r).ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
        let centred = ys.map(|v| v - hyper.mean_const);
        let alpha = chol.solve(&centred);
        let mut scaled = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                scaled[i * d + k] = z[(i, k)] / hyper.lengthscales[k];
            }
        }
        let ll = match log_likelihood {
            Some(v) => v,
            None => {
                let log_ls: Vec<f64> = hyper.lengthscales.iter().map(|l| l.ln()).collect();
                profile_log_likelihood(&z, &ys, &log_ls, hyper.nugget, false).map_or(f64::NAN, |p| p.log_likelihood)
            }
        };
        Ok(Self {
            norm,
            hyper,
            train_x: z,
            train_y: ys,
            chol,
            alpha,
            scaled,
            log_likelihood: ll,
        })
    }

    pub fn dim(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.nrows()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    /// Lengthscales in normalized input units.
    pub fn lengthscales(&self) -> &[f64] {
        &self.hyper.lengthscales
    }

    /// Profile log marginal likelihood at the fitted hyperparameters.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Prior variance of the process in output units.
    pub fn prior_variance(&self) -> f64 {
        self.hyper.signal_variance * self.norm.y_std * self.norm.y_std
    }

    /// Training inputs in raw units.
    pub fn train_inputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_train(), self.dim(), |i, k| {
            self.norm.input_offset[k] + self.norm.input_scale[k] * self.train_x[(i, k)]
        })
    }

    pub fn train_outputs(&self) -> Vec<f64> {
        self.train_y.iter().map(|v| self.norm.y_mean + self.norm.y_std * v).collect()
    }

    /// Predictive mean and mean-squared error at each row of `xstar`.
    pub fn predict(&self, xstar: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        if xstar.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: xstar.ncols() });
        }
        let n = self.n_train();
        let m = xstar.nrows();
        let mut k = DMatrix::<f64>::zeros(n, m);
        let mut zs = vec![0.0; d];
        for j in 0..m {
            for c in 0..d {
                zs[c] = (xstar[(j, c)] - self.norm.input_offset[c]) / self.norm.input_scale[c] / self.hyper.lengthscales[c];
            }
            fill_cross_correlation(&self.scaled, &zs, &mut k.as_mut_slice()[j * n..(j + 1) * n]);
        }
        let mean_std = k.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let s2 = self.hyper.signal_variance;
        let mut mean = Vec::with_capacity(m);
        let mut mse = Vec::with_capacity(m);
        for j in 0..m {
            mean.push(self.norm.y_mean + self.norm.y_std * (self.hyper.mean_const + mean_std[j]));
            let explained = v.column(j).norm_squared();
            let var = (s2 * (1.0 - explained)).max(0.0);
            mse.push(var * self.norm.y_std * self.norm.y_std);
        }
        Ok((mean, mse))
    }

    /// Single-point prediction.
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.predict(&DMatrix::from_row_slice(1, x.len(), x))?;
        Ok((m[0], v[0]))
    }

    /// Leave-one-out residuals `y_i - yhat_{-i}` in output units, with the
    /// hyperparameters held fixed and the constant mean re-estimated.
    pub fn loo_residuals(&self) -> Result<Vec<f64>> {
        let n = self.n_train();
        let rinv = self.chol.inverse();
        let ones = DVector::from_element(n, 1.0);
        let rinv1 = &rinv * &ones;
        let denom = ones.dot(&rinv1);
        if !(denom > 0.0) {
            return Err(Error::Numerical("singular factorization in LOO identity".into()));
        }
        (0..n)
            .map(|i| {
                let q = rinv[(i, i)] - rinv1[i] * rinv1[i] / denom;
                if !(q > 0.0) {
                    return Err(Error::Numerical("singular factorization in LOO identity".into()));
                }
                Ok(self.alpha[i] / q * self.norm.y_std)
            })
            .collect()
    }

    /// Mean squared leave-one-out residual, in squared output units.
    pub fn loocv_error(&self) -> Result<f64> {
        let r = self.loo_residuals()?;
        Ok(r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64)
    }

    pub fn to_document(&self) -> GpDocument {
        let raw = self.train_inputs();
        GpDocument {
            kernel: "squared_exponential_ard".into(),
            normalization: self.norm.clone(),
            hyperparameters: self.hyper.clone(),
            train_x: raw.row_iter().map(|r| r.iter().copied().collect()).collect(),
            train_y: self.train_outputs(),
        }
    }

    pub fn from_document(doc: &GpDocument) -> Result<Self> {
        let n = doc.train_x.len();
        let d = doc.normalization.dim();
        if doc.train_y.len() != n || doc.train_x.iter().any(|r| r.len() != d) {
            return Err(Error::Data("inconsistent GP document shapes".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, k| doc.train_x[i][k]);
        let z = doc.normalization.inputs(&x);
        let ys = doc.normalization.outputs(&doc.train_y);
        Self::assemble(doc.normalization.clone(), doc.hyperparameters.clone(), z, ys, None)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// Fast repeated prediction at fixed sites where only the trailing input
/// columns change between calls.
#[derive(Clone, Debug)]
pub struct SitePredictor<'a> {
    model: &'a GpModel,
    n_fixed: usize,
    // train x sites, fixed-column correlation factor
    kx: DMatrix<f64>,
}

impl GpModel {
    /// Prepares predictions at `sites` (rows), which supply the first
    /// `sites.ncols()` input columns.
    pub fn at_sites(&self, sites: &DMatrix<f64>) -> Result<SitePredictor<'_>> {
        let nf = sites.ncols();
        let d = self.dim();
        if nf > d {
            return Err(Error::DimensionMismatch { expected: d, found: nf });
        }
        let n = self.n_train();
        let mut kx = DMatrix::zeros(n, sites.nrows());
        for s in 0..sites.nrows() {
            let zs: Vec<f64> = (0..nf)
                .map(|c| (sites[(s, c)] - self.norm.input_offset[c]) / self.norm.input_scale[c] / self.hyper.lengthscales[c])
                .collect();
            for i in 0..n {
                let row = &self.scaled[i * d..i * d + nf];
                let q: f64 = row.iter().zip(&zs).map(|(a, b)| (a - b) * (a - b)).sum();
                kx[(i, s)] = (-0.5 * q).exp();
            }
        }
        Ok(SitePredictor { model: self, n_fixed: nf, kx })
    }
}

impl SitePredictor<'_> {
    pub fn n_sites(&self) -> usize {
        self.kx.ncols()
    }

    /// Means and MSEs at every site for the trailing inputs `free`.
    pub fn predict(&self, free: &[f64], with_variance: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.model;
        let d = g.dim();
        let nf = self.n_fixed;
        if free.len() != d - nf {
            return Err(Error::DimensionMismatch { expected: d - nf, found: free.len() });
        }
        let zs: Vec<f64> = free
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let c = nf + k;
                (v - g.norm.input_offset[c]) / g.norm.input_scale[c] / g.hyper.lengthscales[c]
            })
            .collect();
        let n = g.n_train();
        let kt: Vec<f64> = (0..n)
            .map(|i| {
                let row = &g.scaled[i * d + nf..(i + 1) * d];
                let q: f64 = row.iter().zip(&zs).map(|(a, b)| (a - b) * (a - b)).sum();
                (-0.5 * q).exp()
            })
            .collect();
        let ns = self.n_sites();
        let (ym, ys) = (g.norm.y_mean, g.norm.y_std);
        let weights: Vec<f64> = kt.iter().zip(g.alpha.iter()).map(|(a, b)| a * b).collect();
        let mean: Vec<f64> = (0..ns)
            .map(|s| {
                let col = self.kx.column(s);
                let dot: f64 = col.iter().zip(&weights).map(|(a, b)| a * b).sum();
                ym + ys * (g.hyper.mean_const + dot)
            })
            .collect();
        if !with_variance {
            return Ok((mean, vec![0.0; ns]));
        }
        let mut k = self.kx.clone();
        for s in 0..ns {
            for (v, t) in k.column_mut(s).iter_mut().zip(&kt) {
                *v *= t;
            }
        }
        if !g.chol.l_dirty().solve_lower_triangular_mut(&mut k) {
            return Err(Error::Numerical("triangular solve failed".into()));
        }
        let s2 = g.hyper.signal_variance * ys * ys;
        let mse = (0..ns).map(|s| (s2 * (1.0 - k.column(s).norm_squared())).max(0.0)).collect();
        Ok((mean, mse))
    }
}

fn fill_cross_correlation(scaled: &[f64], zs: &[f64], out: &mut [f64]) {
    let d = zs.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &scaled[i * d..(i + 1) * d];
        let mut s = 0.0;
        for c in 0..d {
            let t = row[c] - zs[c];
            s += t * t;
        }
        *o = (-0.5 * s).exp();
    }
}

/// `1 - sum (y - yhat)^2 / sum (y - ybar)^2` over held-out data.
pub fn q2_score(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::DimensionMismatch { expected: y.len(), found: yhat.len() });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::InvalidInput("held-out outputs have zero variance".into()));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Predictivity coefficient of `model` on held-out data.
pub fn predictivity_q2(model: &GpModel, xtest: &DMatrix<f64>, ytest: &[f64]) -> Result<f64> {
    let (pred, _) = model.predict(xtest)?;
    q2_score(ytest, &pred)
}
