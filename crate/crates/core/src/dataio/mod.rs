//! Experimental test ingestion, void-fraction correction, test filtering and
//! measurement-variance assembly.

mod config;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use config::{DataSection, GpCodeSection, LikelihoodSection, McmcSection, RunConfig, SimulatorKind, SimulatorSection};

use crate::error::{Error, Result};

/// One experimental test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub test_id: i64,
    /// Design variables.
    pub x: Vec<f64>,
    /// Measured outputs (void fractions in %).
    pub y: Vec<f64>,
    /// Per-output flag: value went through [`correct_void_fraction`].
    pub corrected: Vec<bool>,
    /// Reason the test was dropped, if it was.
    pub exclusion: Option<String>,
}

impl TestCase {
    pub fn new(test_id: i64, x: Vec<f64>, y: Vec<f64>) -> Self {
        let m = y.len();
        Self {
            test_id,
            x,
            y,
            corrected: vec![false; m],
            exclusion: None,
        }
    }

    pub fn is_excluded(&self) -> bool {
        self.exclusion.is_some()
    }
}

/// Tests plus the column names they were read with.
#[derive(Clone, Debug, PartialEq)]
pub struct TestTable {
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub tests: Vec<TestCase>,
}

impl TestTable {
    pub fn with_default_names(tests: Vec<TestCase>) -> Self {
        let r = tests.first().map_or(0, |t| t.x.len());
        let m = tests.first().map_or(0, |t| t.y.len());
        Self {
            x_names: (1..=r).map(|k| format!("x{k}")).collect(),
            y_names: (1..=m).map(|k| format!("y{k}")).collect(),
            tests,
        }
    }

    /// Non-excluded tests only.
    pub fn retained(&self) -> Vec<TestCase> {
        self.tests.iter().filter(|t| !t.is_excluded()).cloned().collect()
    }
}

/// Reads a `test_id,x1..xr,y1..ym` CSV file.
///
/// With `design_vars = None` the design columns are the leading columns whose
/// header starts with `x`.
pub fn load_tests(path: impl AsRef<Path>, design_vars: Option<usize>) -> Result<TestTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_tests(file, design_vars)
}

pub fn read_tests<R: Read>(r: R, design_vars: Option<usize>) -> Result<TestTable> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("test_id") {
        return Err(Error::Data("row 1: first column must be `test_id`".into()));
    }
    let r = match design_vars {
        Some(r) => r,
        None => header[1..]
            .iter()
            .take_while(|h| h.starts_with('x') || h.starts_with('X'))
            .count(),
    };
    if r == 0 || header.len() < r + 2 {
        return Err(Error::Data(format!(
            "row 1: need test_id, {} design column(s) and at least one output column, found {} columns \
             (design columns are those named x*, or set data.design_vars)",
            r.max(1),
            header.len()
        )));
    }
    let x_names = header[1..=r].to_vec();
    let y_names = header[r + 1..].to_vec();

    let mut tests: Vec<TestCase> = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "row {row}: expected {} columns, found {}",
                header.len(),
                rec.len()
            )));
        }
        let id: i64 = rec[0]
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: test_id `{}` is not an integer", &rec[0])))?;
        let mut vals = Vec::with_capacity(header.len() - 1);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!("row {row}: column `{}` value `{cell}` is not numeric", header[c]))
            })?;
            vals.push(v);
        }
        if tests.iter().any(|t| t.test_id == id) {
            return Err(Error::Data(format!("row {row}: duplicate test_id {id}")));
        }
        if let Some(c) = vals[..r].iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {row}: design variable `{}` is not finite", x_names[c])));
        }
        tests.push(TestCase::new(id, vals[..r].to_vec(), vals[r..].to_vec()));
    }
    Ok(TestTable { x_names, y_names, tests })
}

pub fn write_tests<W: Write>(w: W, table: &TestTable) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["test_id".to_string()];
    header.extend(table.x_names.iter().cloned());
    header.extend(table.y_names.iter().cloned());
    wr.write_record(&header)?;
    for t in &table.tests {
        let mut rec = vec![t.test_id.to_string()];
        rec.extend(t.x.iter().chain(&t.y).map(|v| format!("{v}")));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_tests(path: impl AsRef<Path>, table: &TestTable) -> Result<()> {
    write_tests(File::create(path)?, table)
}

/// Lower and upper ends of the measured range where the correction applies (%).
pub const CORRECTION_RANGE: (f64, f64) = (20.0, 90.0);

/// Densitometer void-fraction correction `a / (1.167 - 0.001 a)` for measured
/// values in `[20, 90]` %. Values outside that range come back unchanged with
/// the flag cleared.
pub fn correct_void_fraction(measured: f64) -> (f64, bool) {
    if (CORRECTION_RANGE.0..=CORRECTION_RANGE.1).contains(&measured) {
        (measured / (1.167 - 0.001 * measured), true)
    } else {
        (measured, false)
    }
}

/// Applies [`correct_void_fraction`] to the outputs listed in `qois`.
pub fn apply_corrections(tests: &mut [TestCase], qois: &[usize]) {
    for t in tests.iter_mut() {
        for &q in qois {
            if q < t.y.len() && !t.corrected[q] {
                let (v, done) = correct_void_fraction(t.y[q]);
                t.y[q] = v;
                t.corrected[q] = done;
            }
        }
    }
}

/// Thresholds for [`filter_tests`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterRules {
    /// Allowed excess of a lower-elevation void over the next higher one (void-%).
    pub ordering_tol: f64,
    /// Outlier cut in units of the MAD-based robust scale.
    pub outlier_k: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            ordering_tol: 2.0,
            outlier_k: 5.0,
        }
    }
}

pub const REASON_ORDERING: &str = "non-physical ordering";
pub const REASON_OUTLIER: &str = "outlier";

/// Marks tests to drop.
///
/// `elevation_order` lists output indices from lowest to highest elevation. A
/// test is dropped when some lower output exceeds the next higher one by more
/// than `ordering_tol`. With `residuals` (tests x outputs, `yE - yM(theta0)`)
/// it is also dropped when any residual sits more than `outlier_k` robust
/// scales from that output's median. The statistics use every row, excluded or
/// not, so the filter is idempotent. Negative measurements are kept.
pub fn filter_tests(
    tests: &[TestCase],
    elevation_order: &[usize],
    residuals: Option<&DMatrix<f64>>,
    rules: &FilterRules,
) -> Result<Vec<TestCase>> {
    let mut out = tests.to_vec();
    for t in out.iter_mut().filter(|t| !t.is_excluded()) {
        let inverted = elevation_order
            .windows(2)
            .any(|w| t.y[w[0]] - t.y[w[1]] > rules.ordering_tol);
        if inverted {
            t.exclusion = Some(REASON_ORDERING.to_string());
        }
    }
    if let Some(res) = residuals {
        if res.nrows() != tests.len() {
            return Err(Error::DimensionMismatch { expected: tests.len(), found: res.nrows() });
        }
        for q in 0..res.ncols() {
            let col: Vec<f64> = res.column(q).iter().copied().collect();
            let med = median(&col);
            let dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let scale = 1.4826 * median(&dev);
            if !(scale > 0.0) {
                continue;
            }
            for (t, r) in out.iter_mut().zip(&col) {
                if !t.is_excluded() && (r - med).abs() > rules.outlier_k * scale {
                    t.exclusion = Some(REASON_OUTLIER.to_string());
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Standard deviation is a fraction of the measured value.
    #[default]
    Relative,
    /// Standard deviation is a fixed number of void-% points.
    AbsolutePoints,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementError {
    pub mode: ErrorMode,
    /// Relative fraction, or absolute points in `AbsolutePoints` mode.
    pub rel: f64,
    /// Lower bound on the standard deviation in `Relative` mode (void-%).
    pub std_floor: f64,
    /// Optional per-output replacement for `rel`.
    pub per_qoi: Option<Vec<f64>>,
}

impl Default for MeasurementError {
    fn default() -> Self {
        Self {
            mode: ErrorMode::Relative,
            rel: 0.02,
            std_floor: 0.5,
            per_qoi: None,
        }
    }
}

/// Diagonal measurement variances for an observation vector stacked
/// test-major with `m` outputs per test.
pub fn build_sigma_exp(y_stacked: &[f64], m: usize, err: &MeasurementError) -> Result<Vec<f64>> {
    if !(err.rel > 0.0) {
        return Err(Error::Config(format!("measurement error must be positive, got {}", err.rel)));
    }
    if m == 0 || y_stacked.len() % m != 0 {
        return Err(Error::DimensionMismatch { expected: m, found: y_stacked.len() });
    }
    if let Some(p) = &err.per_qoi {
        if p.len() != m || p.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("per-output measurement errors must be positive, one per output".into()));
        }
    }
    Ok(y_stacked
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let rel = err.per_qoi.as_ref().map_or(err.rel, |p| p[i % m]);
            let std = match err.mode {
                ErrorMode::Relative => (rel * y.abs()).max(err.std_floor),
                ErrorMode::AbsolutePoints => rel,
            };
            std * std
        })
        .collect())
}
