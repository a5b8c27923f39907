//! The two emulators of the modular calibration: one for the model
//! discrepancy over design variables, one for the simulator over design
//! variables and calibration parameters.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::TestCase;
use crate::doe::{maximin_lhs, scale_from_unit};
use crate::error::{Error, Result};
use crate::gp::{self, GpConfig, GpDocument, GpModel, SitePredictor};
use crate::tsa::ConvexHull;

/// Uniform box prior on the calibration parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nominal: Vec<f64>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            names: ["P1008", "P1012", "P1022", "P1028", "P1029"].map(String::from).to_vec(),
            lower: vec![0.0; 5],
            upper: vec![5.0; 5],
            nominal: vec![1.0; 5],
        }
    }
}

impl PriorSpec {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>, nominal: Vec<f64>) -> Result<Self> {
        let p = Self { names, lower, upper, nominal };
        p.validate()?;
        Ok(p)
    }

    /// Same bounds for every parameter, named `theta1..thetap`.
    pub fn uniform(p: usize, lower: f64, upper: f64, nominal: f64) -> Result<Self> {
        Self::new(
            (1..=p).map(|k| format!("theta{k}")).collect(),
            vec![lower; p],
            vec![upper; p],
            vec![nominal; p],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.lower.len();
        if p == 0 || self.upper.len() != p || self.nominal.len() != p || self.names.len() != p {
            return Err(Error::Config("prior names, lower, upper and nominal must have equal nonzero length".into()));
        }
        for k in 0..p {
            let (lo, hi, nom) = (self.lower[k], self.upper[k], self.nominal[k]);
            if !(lo < hi) {
                return Err(Error::Config(format!("prior {}: lower {lo} must be below upper {hi}", self.names[k])));
            }
            if !(nom > lo && nom < hi) {
                return Err(Error::Config(format!("prior {}: nominal {nom} outside ({lo}, {hi})", self.names[k])));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lower.iter().copied().zip(self.upper.iter().copied()).collect()
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Strict interior test; the bounds themselves are outside.
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t > *l && *t < *u)
    }
}

/// A simulator evaluated at a test's design variables and a parameter vector.
pub trait Simulator: Sync {
    fn n_outputs(&self) -> usize;

    fn simulate(&self, test_id: i64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>>;
}

/// Precomputed simulator runs, looked up by exact `(x, theta)` match.
#[derive(Clone, Debug, Default)]
pub struct TabulatedSimulator {
    m: usize,
    rows: HashMap<Vec<u64>, Vec<f64>>,
}

fn key(x: &[f64], theta: &[f64]) -> Vec<u64> {
    x.iter().chain(theta).map(|v| (v + 0.0).to_bits()).collect()
}

impl TabulatedSimulator {
    pub fn new(m: usize) -> Self {
        Self { m, rows: HashMap::new() }
    }

    pub fn insert(&mut self, x: &[f64], theta: &[f64], y: Vec<f64>) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, found: y.len() });
        }
        self.rows.insert(key(x, theta), y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads a design CSV with header `test_id,x1..xr,theta1..thetap,y1..ym`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let table = read_design_csv(r)?;
        let mut sim = Self::new(table.m);
        for i in 0..table.test_ids.len() {
            let row = table.inputs.row(i);
            let (x, t) = (row.columns(0, table.r), row.columns(table.r, table.p));
            let x: Vec<f64> = x.iter().copied().collect();
            let t: Vec<f64> = t.iter().copied().collect();
            sim.insert(&x, &t, table.outputs.row(i).iter().copied().collect())?;
        }
        Ok(sim)
    }
}

impl Simulator for TabulatedSimulator {
    fn n_outputs(&self) -> usize {
        self.m
    }

    fn simulate(&self, test_id: i64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.rows.get(&key(x, theta)).cloned().ok_or_else(|| Error::Simulator {
            test_id,
            reason: "no tabulated run for these inputs".into(),
        })
    }
}

/// `yE - yM(x, theta0)` for each test (rows) and output (columns).
pub fn compute_residuals(tests: &[TestCase], sim: &dyn Simulator, theta0: &[f64]) -> Result<DMatrix<f64>> {
    let m = sim.n_outputs();
    let rows: Vec<Vec<f64>> = tests
        .par_iter()
        .map(|t| {
            let y = sim.simulate(t.test_id, &t.x, theta0)?;
            if y.len() != m || t.y.len() != m {
                return Err(Error::Simulator {
                    test_id: t.test_id,
                    reason: format!("expected {m} outputs, simulator gave {} and data hold {}", y.len(), t.y.len()),
                });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulator { test_id: t.test_id, reason: "non-finite output".into() });
            }
            Ok(t.y.iter().zip(&y).map(|(e, s)| e - s).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(tests.len(), m, |i, q| rows[i][q]))
}

/// Design-variable matrix of `tests`, one row per test.
pub fn design_matrix(tests: &[TestCase]) -> DMatrix<f64> {
    let r = tests.first().map_or(0, |t| t.x.len());
    DMatrix::from_fn(tests.len(), r, |i, k| tests[i].x[k])
}

/// Independent GP per output, trained on validation tests.
#[derive(Clone, Debug)]
pub struct BiasModel {
    pub models: Vec<GpModel>,
    train_x: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiasDocument {
    pub models: Vec<GpDocument>,
}

impl BiasModel {
    pub fn qoi_count(&self) -> usize {
        self.models.len()
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_x
    }

    pub fn to_document(&self) -> BiasDocument {
        BiasDocument { models: self.models.iter().map(GpModel::to_document).collect() }
    }

    pub fn from_document(doc: &BiasDocument) -> Result<Self> {
        let models: Vec<GpModel> = doc.models.iter().map(GpModel::from_document).collect::<Result<_>>()?;
        let train_x = models.first().map(GpModel::train_inputs).ok_or(Error::EmptyDesign)?;
        Ok(Self { models, train_x })
    }
}

pub fn train_gpbias(x_val: &DMatrix<f64>, residuals: &DMatrix<f64>, cfg: &GpConfig, seed: u64) -> Result<BiasModel> {
    let (n, r) = x_val.shape();
    if residuals.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, found: residuals.nrows() });
    }
    if n < r + 2 {
        return Err(Error::InvalidInput(format!("discrepancy emulator needs at least {} validation tests, got {n}", r + 2)));
    }
    let models = (0..residuals.ncols())
        .into_par_iter()
        .map(|q| {
            let y: Vec<f64> = residuals.column(q).iter().copied().collect();
            gp::fit(x_val, &y, cfg, seed.wrapping_add(q as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasModel { models, train_x: x_val.clone() })
}

/// Discrepancy means and variances at the inverse-UQ tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiasEvaluation {
    /// Tests x outputs.
    pub delta: Vec<Vec<f64>>,
    /// Stacked test-major, output-minor.
    pub sigma_bias: Vec<f64>,
    /// Row indices lying outside the validation hull.
    pub extrapolated: Vec<usize>,
}

impl BiasEvaluation {
    pub fn delta_stacked(&self) -> Vec<f64> {
        self.delta.iter().flatten().copied().collect()
    }

    /// Zero discrepancy with zero variance.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { delta: vec![vec![0.0; m]; n], sigma_bias: vec![0.0; n * m], extrapolated: Vec::new() }
    }
}

pub fn evaluate_bias(bias: &BiasModel, x_iuq: &DMatrix<f64>) -> Result<BiasEvaluation> {
    let r = bias.train_x.ncols();
    if x_iuq.ncols() != r {
        return Err(Error::DimensionMismatch { expected: r, found: x_iuq.ncols() });
    }
    let hull = ConvexHull::new(&bias.train_x);
    let extrapolated: Vec<usize> = if hull.is_degenerate() {
        Vec::new()
    } else {
        (0..x_iuq.nrows())
            .filter(|&i| !hull.contains(&x_iuq.row(i).iter().copied().collect::<Vec<_>>()))
            .collect()
    };
    if !extrapolated.is_empty() {
        log::warn!(
            "{} inverse-UQ test(s) lie outside the validation hull; discrepancy is extrapolated",
            extrapolated.len()
        );
    }
    let n = x_iuq.nrows();
    let m = bias.qoi_count();
    let mut delta = vec![vec![0.0; m]; n];
    let mut sigma = vec![0.0; n * m];
    for (q, model) in bias.models.iter().enumerate() {
        let (mean, mse) = model.predict(x_iuq)?;
        for i in 0..n {
            delta[i][q] = mean[i];
            sigma[i * m + q] = mse[i];
        }
    }
    Ok(BiasEvaluation { delta, sigma_bias: sigma, extrapolated })
}

/// Simulator design: rows `(x_i, theta_ij)`, test-major.
#[derive(Clone, Debug)]
pub struct CodeDesign {
    pub inputs: DMatrix<f64>,
    /// Index into the inverse-UQ tests for each row.
    pub site: Vec<usize>,
    pub n_design: usize,
    pub r: usize,
    pub p: usize,
}

impl CodeDesign {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn theta(&self, row: usize) -> Vec<f64> {
        self.inputs.row(row).columns(self.r, self.p).iter().copied().collect()
    }

    pub fn x(&self, row: usize) -> Vec<f64> {
        self.inputs.row(row).columns(0, self.r).iter().copied().collect()
    }
}

pub fn build_code_design(x_iuq: &DMatrix<f64>, prior: &PriorSpec, n_design: usize, seed: u64) -> Result<CodeDesign> {
    if n_design < 2 {
        return Err(Error::InvalidInput("n_design must be at least 2".into()));
    }
    let (n, r) = x_iuq.shape();
    let p = prior.dim();
    let bounds = prior.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let blocks = seeds
        .par_iter()
        .map(|&s| Ok(scale_from_unit(&maximin_lhs(n_design, p, 50, s)?, &bounds)))
        .collect::<Result<Vec<_>>>()?;
    let mut inputs = DMatrix::zeros(n * n_design, r + p);
    let mut site = Vec::with_capacity(n * n_design);
    for (i, block) in blocks.iter().enumerate() {
        for j in 0..n_design {
            let row = i * n_design + j;
            for k in 0..r {
                inputs[(row, k)] = x_iuq[(i, k)];
            }
            for k in 0..p {
                inputs[(row, r + k)] = block[(j, k)];
            }
            site.push(i);
        }
    }
    Ok(CodeDesign { inputs, site, n_design, r, p })
}

/// Holdout rows at the inverse-UQ sites: one maximin LHS over the parameter
/// box, assigned to sites in turn.
pub fn build_holdout_design(x_iuq: &DMatrix<f64>, prior: &PriorSpec, n_rows: usize, seed: u64) -> Result<CodeDesign> {
    let (n, r) = x_iuq.shape();
    if n == 0 || n_rows == 0 {
        return Err(Error::EmptyDesign);
    }
    let p = prior.dim();
    let theta = scale_from_unit(&maximin_lhs(n_rows, p, 50, seed)?, &prior.bounds());
    let mut inputs = DMatrix::zeros(n_rows, r + p);
    let mut site = Vec::with_capacity(n_rows);
    for j in 0..n_rows {
        let i = j % n;
        for k in 0..r {
            inputs[(j, k)] = x_iuq[(i, k)];
        }
        for k in 0..p {
            inputs[(j, r + k)] = theta[(j, k)];
        }
        site.push(i);
    }
    Ok(CodeDesign { inputs, site, n_design: 1, r, p })
}

/// Runs the simulator on every design row; outputs are rows x outputs.
pub fn run_simulator(design: &CodeDesign, test_ids: &[i64], sim: &dyn Simulator) -> Result<DMatrix<f64>> {
    let m = sim.n_outputs();
    let rows: Vec<Vec<f64>> = (0..design.len())
        .into_par_iter()
        .map(|row| {
            let id = test_ids[design.site[row]];
            let y = sim.simulate(id, &design.x(row), &design.theta(row))?;
            if y.len() != m || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Simulator { test_id: id, reason: "invalid simulator output".into() });
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(design.len(), m, |i, q| rows[i][q]))
}

/// Independent GP per output over `(x, theta)`.
#[derive(Clone, Debug)]
pub struct CodeEmulator {
    pub models: Vec<GpModel>,
    pub r: usize,
    pub p: usize,
    pub n_design: usize,
    pub prior: PriorSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodeEmulatorDocument {
    pub r: usize,
    pub p: usize,
    pub n_design: usize,
    pub prior: PriorSpec,
    pub models: Vec<GpDocument>,
}

impl CodeEmulator {
    pub fn qoi_count(&self) -> usize {
        self.models.len()
    }

    /// Means and MSEs for every output at one `(x, theta)`.
    pub fn predict(&self, x: &[f64], theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut z = x.to_vec();
        z.extend_from_slice(theta);
        let mut mean = Vec::with_capacity(self.qoi_count());
        let mut mse = Vec::with_capacity(self.qoi_count());
        for m in &self.models {
            let (a, b) = m.predict_one(&z)?;
            mean.push(a);
            mse.push(b);
        }
        Ok((mean, mse))
    }

    pub fn to_document(&self) -> CodeEmulatorDocument {
        CodeEmulatorDocument {
            r: self.r,
            p: self.p,
            n_design: self.n_design,
            prior: self.prior.clone(),
            models: self.models.iter().map(GpModel::to_document).collect(),
        }
    }

    pub fn from_document(doc: &CodeEmulatorDocument) -> Result<Self> {
        let models: Vec<GpModel> = doc.models.iter().map(GpModel::from_document).collect::<Result<_>>()?;
        if models.iter().any(|m| m.dim() != doc.r + doc.p) {
            return Err(Error::Data("emulator dimension disagrees with r + p".into()));
        }
        Ok(Self { models, r: doc.r, p: doc.p, n_design: doc.n_design, prior: doc.prior.clone() })
    }
}

/// A [`CodeEmulator`] pinned to fixed test sites for repeated parameter sweeps.
#[derive(Clone, Debug)]
pub struct SiteEmulator<'a> {
    preds: Vec<SitePredictor<'a>>,
    n_sites: usize,
}

impl CodeEmulator {
    pub fn at_sites(&self, x_sites: &DMatrix<f64>) -> Result<SiteEmulator<'_>> {
        if x_sites.ncols() != self.r {
            return Err(Error::DimensionMismatch { expected: self.r, found: x_sites.ncols() });
        }
        let preds = self.models.iter().map(|m| m.at_sites(x_sites)).collect::<Result<_>>()?;
        Ok(SiteEmulator { preds, n_sites: x_sites.nrows() })
    }
}

impl SiteEmulator<'_> {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Means and MSEs stacked test-major, output-minor.
    pub fn evaluate(&self, theta: &[f64], with_variance: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.preds.len();
        let mut mean = vec![0.0; self.n_sites * m];
        let mut mse = vec![0.0; self.n_sites * m];
        for (q, p) in self.preds.iter().enumerate() {
            let (a, b) = p.predict(theta, with_variance)?;
            for s in 0..self.n_sites {
                mean[s * m + q] = a[s];
                mse[s * m + q] = b[s];
            }
        }
        Ok((mean, mse))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoiValidation {
    pub qoi: usize,
    pub q2: f64,
    pub loocv: f64,
    pub gate_passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_design: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub q2_threshold: f64,
    pub qois: Vec<QoiValidation>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn failing(&self) -> Vec<usize> {
        self.qois.iter().filter(|q| !q.gate_passed).map(|q| q.qoi).collect()
    }
}

/// Fits one GP per output and scores it on held-out runs. A failed gate is
/// reported, not raised.
#[allow(clippy::too_many_arguments)]
pub fn train_and_validate_gpcode(
    design: &CodeDesign,
    outputs: &DMatrix<f64>,
    holdout: &CodeDesign,
    holdout_outputs: &DMatrix<f64>,
    prior: &PriorSpec,
    q2_threshold: f64,
    cfg: &GpConfig,
    seed: u64,
) -> Result<(CodeEmulator, ValidationReport)> {
    let n = design.len();
    if outputs.nrows() != n || holdout_outputs.nrows() != holdout.len() {
        return Err(Error::DimensionMismatch { expected: n, found: outputs.nrows() });
    }
    if outputs.ncols() != holdout_outputs.ncols() {
        return Err(Error::DimensionMismatch { expected: outputs.ncols(), found: holdout_outputs.ncols() });
    }
    let train_rows: std::collections::HashSet<Vec<u64>> = (0..n)
        .map(|i| design.inputs.row(i).iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    for j in 0..holdout.len() {
        let k: Vec<u64> = holdout.inputs.row(j).iter().map(|v| (v + 0.0).to_bits()).collect();
        if train_rows.contains(&k) {
            return Err(Error::InvalidInput(format!("holdout row {j} duplicates a training row")));
        }
    }
    let fits = (0..outputs.ncols())
        .into_par_iter()
        .map(|q| {
            let y: Vec<f64> = outputs.column(q).iter().copied().collect();
            let model = gp::fit(&design.inputs, &y, cfg, seed.wrapping_add(q as u64))?;
            let yh: Vec<f64> = holdout_outputs.column(q).iter().copied().collect();
            let q2 = gp::predictivity_q2(&model, &holdout.inputs, &yh)?;
            let loocv = model.loocv_error()?;
            Ok((model, QoiValidation { qoi: q, q2, loocv, gate_passed: q2 >= q2_threshold }))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, qois): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    let passed = qois.iter().all(|q| q.gate_passed);
    let report = ValidationReport {
        n_design: design.n_design,
        n_train: n,
        n_holdout: holdout.len(),
        q2_threshold,
        qois,
        passed,
    };
    let emu = CodeEmulator { models, r: design.r, p: design.p, n_design: design.n_design, prior: prior.clone() };
    Ok((emu, report))
}

/// Options for [`emulate_code`].
#[derive(Clone, Debug)]
pub struct CodeOptions {
    pub n_design: usize,
    pub holdout_fraction: f64,
    pub q2_threshold: f64,
    pub gp: GpConfig,
}

impl Default for CodeOptions {
    fn default() -> Self {
        Self { n_design: 20, holdout_fraction: 0.25, q2_threshold: 0.95, gp: GpConfig::default() }
    }
}

/// Everything produced while building the simulator emulator.
#[derive(Clone, Debug)]
pub struct CodeBuild {
    pub emulator: CodeEmulator,
    pub report: ValidationReport,
    pub design: CodeDesign,
    pub outputs: DMatrix<f64>,
}

/// Design, simulator runs, fit and holdout validation in one call.
pub fn emulate_code(
    iuq_tests: &[TestCase],
    sim: &dyn Simulator,
    prior: &PriorSpec,
    opts: &CodeOptions,
    seed: u64,
) -> Result<CodeBuild> {
    let x_iuq = design_matrix(iuq_tests);
    let ids: Vec<i64> = iuq_tests.iter().map(|t| t.test_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s_design, s_hold, s_fit): (u64, u64, u64) = (rng.random(), rng.random(), rng.random());
    let design = build_code_design(&x_iuq, prior, opts.n_design, s_design)?;
    let outputs = run_simulator(&design, &ids, sim)?;
    let n_hold = ((opts.holdout_fraction * design.len() as f64).ceil() as usize).max(1);
    let holdout = build_holdout_design(&x_iuq, prior, n_hold, s_hold)?;
    let hold_out = run_simulator(&holdout, &ids, sim)?;
    let (emulator, report) =
        train_and_validate_gpcode(&design, &outputs, &holdout, &hold_out, prior, opts.q2_threshold, &opts.gp, s_fit)?;
    Ok(CodeBuild { emulator, report, design, outputs })
}

/// Writes `test_id,x1..xr,theta1..thetap,y1..ym`.
pub fn write_design_csv<W: Write>(w: W, design: &CodeDesign, test_ids: &[i64], outputs: &DMatrix<f64>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["test_id".to_string()];
    header.extend((1..=design.r).map(|k| format!("x{k}")));
    header.extend((1..=design.p).map(|k| format!("theta{k}")));
    header.extend((1..=outputs.ncols()).map(|k| format!("y{k}")));
    wr.write_record(&header)?;
    for i in 0..design.len() {
        let mut rec = vec![test_ids[design.site[i]].to_string()];
        rec.extend(design.inputs.row(i).iter().map(|v| format!("{v}")));
        rec.extend(outputs.row(i).iter().map(|v| format!("{v}")));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Contents of a design CSV.
#[derive(Clone, Debug)]
pub struct DesignTable {
    pub test_ids: Vec<i64>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub r: usize,
    pub p: usize,
    pub m: usize,
}

pub fn read_design_csv<R: Read>(r: R) -> Result<DesignTable> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
            .count()
    };
    let (nr, np, nm) = (count("x"), count("theta"), count("y"));
    if header.get(0) != Some("test_id") || header.len() != 1 + nr + np + nm || nm == 0 {
        return Err(Error::Data("design header must be test_id,x1..xr,theta1..thetap,y1..ym".into()));
    }
    let mut ids = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let id = rec[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Data(format!("row {}: bad test_id `{}`", row + 2, &rec[0])))?;
        ids.push(id);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            vals.push(cell.trim().parse::<f64>().map_err(|_| {
                Error::Data(format!("row {}: non-numeric `{cell}` in column {}", row + 2, &header[c]))
            })?);
        }
    }
    let n = ids.len();
    let w = nr + np + nm;
    Ok(DesignTable {
        test_ids: ids,
        inputs: DMatrix::from_fn(n, nr + np, |i, k| vals[i * w + k]),
        outputs: DMatrix::from_fn(n, nm, |i, k| vals[i * w + nr + np + k]),
        r: nr,
        p: np,
        m: nm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doe::is_latin;
    use crate::toymodel::{generate_experiments, ToyModel, ToySpec};
    use approx::assert_abs_diff_eq;

    struct Offset(f64);

    impl Simulator for Offset {
        fn n_outputs(&self) -> usize {
            2
        }
        fn simulate(&self, test_id: i64, x: &[f64], _theta: &[f64]) -> Result<Vec<f64>> {
            if test_id == 99 {
                return Err(Error::Simulator { test_id, reason: "boom".into() });
            }
            Ok(vec![x[0] + self.0, x[1] + self.0])
        }
    }

    fn tests() -> Vec<TestCase> {
        (0..5).map(|i| TestCase::new(i, vec![i as f64, 2.0 * i as f64], vec![i as f64, 2.0 * i as f64])).collect()
    }

    #[test]
    fn residual_identities() {
        let r = compute_residuals(&tests(), &Offset(0.0), &[1.0]).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
        let r = compute_residuals(&tests(), &Offset(1.5), &[1.0]).unwrap();
        assert!(r.iter().all(|v| *v == -1.5));
        let mut t = tests();
        t[3].test_id = 99;
        match compute_residuals(&t, &Offset(0.0), &[1.0]) {
            Err(Error::Simulator { test_id, .. }) => assert_eq!(test_id, 99),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn toy_residuals_follow_the_bias() {
        let spec = ToySpec { noise_rel: 0.0, bias_amplitude: 1.0, ..Default::default() };
        let t = generate_experiments(&spec, 15, 3).unwrap();
        let r = compute_residuals(&t, &ToyModel, &spec.theta_true).unwrap();
        for (i, tc) in t.iter().enumerate() {
            let b = ToyModel.bias(&tc.x);
            for q in 0..4 {
                assert_abs_diff_eq!(r[(i, q)], b[q], epsilon = 1e-9);
            }
        }
    }

    fn lattice(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n * n, 2, |i, k| if k == 0 { (i / n) as f64 } else { (i % n) as f64 } / (n - 1) as f64)
    }

    #[test]
    fn zero_residuals_give_zero_bias() {
        let x = lattice(4);
        let b = train_gpbias(&x, &DMatrix::zeros(16, 2), &GpConfig::default(), 0).unwrap();
        let e = evaluate_bias(&b, &DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.9, 0.1])).unwrap();
        assert!(e.delta_stacked().iter().all(|v| v.abs() < 1e-9));
        assert!(e.sigma_bias.iter().all(|v| *v < 1e-9));
        assert!(e.extrapolated.is_empty());
    }

    #[test]
    fn linear_residuals_interpolated() {
        let x = lattice(4);
        let res = DMatrix::from_fn(16, 1, |i, _| 2.0 + 3.0 * x[(i, 0)] - x[(i, 1)]);
        let b = train_gpbias(&x, &res, &GpConfig::default(), 1).unwrap();
        let q = DMatrix::from_row_slice(3, 2, &[0.2, 0.5, 0.7, 0.8, 0.45, 0.15]);
        let e = evaluate_bias(&b, &q).unwrap();
        for i in 0..3 {
            let truth = 2.0 + 3.0 * q[(i, 0)] - q[(i, 1)];
            assert!((e.delta[i][0] - truth).abs() <= 0.05 * truth.abs());
        }
        let again = train_gpbias(&x, &res, &GpConfig::default(), 1).unwrap();
        assert_eq!(b.models[0].hyperparameters(), again.models[0].hyperparameters());
    }

    #[test]
    fn informative_and_non_informative_sites() {
        let x = lattice(4);
        let res = DMatrix::from_fn(16, 1, |i, _| (7.0 * x[(i, 0)]).sin() * (5.0 * x[(i, 1)]).cos());
        let cfg = GpConfig { nugget: 0.0, ..Default::default() };
        let b = train_gpbias(&x, &res, &cfg, 2).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[x[(5, 0)], x[(5, 1)], 0.5, 0.5]);
        let e = evaluate_bias(&b, &q).unwrap();
        assert_abs_diff_eq!(e.delta[0][0], res[(5, 0)], epsilon = 1e-6);
        assert!(e.sigma_bias[0] < 1e-8);
        assert!(e.sigma_bias[1] > 1e-6);
        let far = evaluate_bias(&b, &DMatrix::from_row_slice(1, 2, &[3.0, 3.0])).unwrap();
        assert_eq!(far.extrapolated, vec![0]);
    }

    #[test]
    fn too_few_validation_tests() {
        let x = DMatrix::from_row_slice(3, 2, &[0., 0., 1., 0., 0., 1.]);
        assert!(train_gpbias(&x, &DMatrix::zeros(3, 1), &GpConfig::default(), 0).is_err());
    }

    #[test]
    fn code_design_shape_and_latin_blocks() {
        let x = DMatrix::from_fn(19, 4, |i, k| (i * (k + 1)) as f64);
        let prior = PriorSpec::default();
        let d = build_code_design(&x, &prior, 20, 7).unwrap();
        assert_eq!(d.inputs.shape(), (380, 9));
        for i in 0..19 {
            let block = d.inputs.view((i * 20, 4), (20, 5)).into_owned() / 5.0;
            assert!(is_latin(&block));
            for j in 0..20 {
                assert_eq!(d.x(i * 20 + j), x.row(i).iter().copied().collect::<Vec<_>>());
                assert!(prior.contains(&d.theta(i * 20 + j)));
            }
        }
        assert!(build_code_design(&x, &prior, 1, 7).is_err());
    }

    #[test]
    fn holdout_duplicate_rejected() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let prior = PriorSpec::uniform(1, 0.0, 1.0, 0.5).unwrap();
        let d = build_code_design(&x, &prior, 3, 1).unwrap();
        let y = DMatrix::from_fn(d.len(), 1, |i, _| d.inputs[(i, 0)] + d.inputs[(i, 1)]);
        let mut hold = build_holdout_design(&x, &prior, 3, 2).unwrap();
        hold.inputs.set_row(1, &d.inputs.row(4));
        let hy = DMatrix::from_fn(3, 1, |i, _| hold.inputs[(i, 0)] + hold.inputs[(i, 1)]);
        let err = train_and_validate_gpcode(&d, &y, &hold, &hy, &prior, 0.95, &GpConfig::default(), 0);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn design_csv_round_trip_feeds_table_simulator() {
        let x = DMatrix::from_fn(3, 2, |i, k| 0.1 * (i + k) as f64 + 0.123456789);
        let prior = PriorSpec::uniform(2, 0.0, 5.0, 1.0).unwrap();
        let d = build_code_design(&x, &prior, 4, 3).unwrap();
        let y = DMatrix::from_fn(d.len(), 1, |i, _| d.inputs.row(i).sum());
        let mut buf = Vec::new();
        write_design_csv(&mut buf, &d, &[10, 11, 12], &y).unwrap();
        let table = read_design_csv(buf.as_slice()).unwrap();
        assert_eq!((table.r, table.p, table.m), (2, 2, 1));
        assert_eq!(table.inputs, d.inputs);
        let sim = TabulatedSimulator::read_csv(buf.as_slice()).unwrap();
        assert_eq!(sim.simulate(11, &d.x(5), &d.theta(5)).unwrap()[0], y[(5, 0)]);
        assert!(matches!(sim.simulate(11, &[9.0, 9.0], &[1.0, 1.0]), Err(Error::Simulator { test_id: 11, .. })));
    }

    #[test]
    fn prior_rules() {
        let p = PriorSpec::default();
        assert!(p.contains(&[1.0; 5]));
        assert!(!p.contains(&[1.0, 1.0, 1.0, 1.0, 5.0]));
        assert!(!p.contains(&[1.0, 1.0, 1.0, 1.0, 5.0001]));
        assert!(PriorSpec::uniform(2, 1.0, 1.0, 1.0).is_err());
        assert!(PriorSpec::uniform(2, 0.0, 1.0, 2.0).is_err());
    }
}
