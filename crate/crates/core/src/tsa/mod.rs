//! Test source allocation: split experimental tests between inverse UQ and
//! validation.
//!
//! The validation side is seeded with the shortest coverage-greedy prefix whose
//! convex hull matches the hull of every test. The inverse-UQ side starts from
//! the tests that most often appear in discrepancy-greedy runs and then grows
//! one test at a time, always taking the test that gives the lowest discrepancy.

mod hull;

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hull::{convex_hull_volume, ConvexHull, HullVolume};

use crate::dataio::TestCase;
use crate::doe::{column_ranges, normalize_to_unit_cube, DiscrepancyMeasure};
use crate::error::{Error, Result};

/// Coverage values this close to one are treated as full coverage.
pub const COVERAGE_TOL: f64 = 1e-9;

/// `floor(n * frac)`, robust to representation error in `frac`.
pub fn fraction_count(n: usize, frac: f64) -> usize {
    (n as f64 * frac + 1e-9).floor() as usize
}

/// Non-excluded tests, sorted by id, with coordinates normalized to the unit
/// cube spanned by all of them.
#[derive(Clone, Debug)]
pub struct TestDomain {
    pub ids: Vec<i64>,
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl TestDomain {
    pub fn from_tests(tests: &[TestCase]) -> Result<Self> {
        let mut kept: Vec<&TestCase> = tests.iter().filter(|t| !t.is_excluded()).collect();
        if kept.is_empty() {
            return Err(Error::EmptyDesign);
        }
        kept.sort_by_key(|t| t.test_id);
        let r = kept[0].x.len();
        if let Some(bad) = kept.iter().find(|t| t.x.len() != r) {
            return Err(Error::DimensionMismatch { expected: r, found: bad.x.len() });
        }
        let ids = kept.iter().map(|t| t.test_id).collect();
        let x = DMatrix::from_fn(kept.len(), r, |i, k| kept[i].x[k]);
        Self::new(ids, x)
    }

    pub fn new(ids: Vec<i64>, x: DMatrix<f64>) -> Result<Self> {
        if ids.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), found: ids.len() });
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by_key(|&i| ids[i]);
        if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
            return Err(Error::Data("duplicate test id in allocation domain".into()));
        }
        let ids: Vec<i64> = order.iter().map(|&i| ids[i]).collect();
        let x = x.select_rows(&order);
        let bounds = column_ranges(&x)?
            .into_iter()
            .map(|(lo, hi)| if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) })
            .collect::<Vec<_>>();
        let u = normalize_to_unit_cube(&x, &bounds)?;
        Ok(Self { ids, x, u })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    fn index_of(&self, id: i64) -> Result<usize> {
        self.ids
            .binary_search(&id)
            .map_err(|_| Error::InvalidInput(format!("unknown test id {id}")))
    }

    pub fn indices_of(&self, ids: &[i64]) -> Result<Vec<usize>> {
        ids.iter().map(|&id| self.index_of(id)).collect()
    }
}

/// Ratio of hull volumes `V(subset) / V(full)`, both normalized to the unit
/// cube of `full`. Zero when the subset hull is degenerate.
pub fn coverage_ratio(subset: &DMatrix<f64>, full: &DMatrix<f64>) -> Result<f64> {
    let bounds: Vec<(f64, f64)> = column_ranges(full)?
        .into_iter()
        .map(|(lo, hi)| if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) })
        .collect();
    let uf = normalize_to_unit_cube(full, &bounds)?;
    let us = normalize_to_unit_cube(subset, &bounds)?;
    let full_v = convex_hull_volume(&uf);
    if full_v.degenerate {
        return Err(Error::DegenerateHull);
    }
    Ok(ratio(convex_hull_volume(&us), full_v.volume))
}

fn ratio(sub: HullVolume, full: f64) -> f64 {
    if sub.degenerate {
        return 0.0;
    }
    let eta = sub.volume / full;
    if eta >= 1.0 - COVERAGE_TOL {
        1.0
    } else {
        eta
    }
}

/// Coverage of the rows `rows` of the normalized domain.
fn domain_coverage(domain: &TestDomain, rows: &[usize], full_volume: f64) -> f64 {
    ratio(convex_hull_volume(&domain.u.select_rows(rows)), full_volume)
}

/// Tests re-ordered by greedy coverage, with the coverage of every prefix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageTrace {
    pub ordered_ids: Vec<i64>,
    /// `eta[n - 1]` is the coverage of the first `n` tests.
    pub eta: Vec<f64>,
    /// Size of the extreme-value seed set.
    pub start_len: usize,
}

impl CoverageTrace {
    /// Length of the shortest prefix with full coverage.
    pub fn full_coverage_len(&self) -> usize {
        self.eta
            .iter()
            .position(|&e| e >= 1.0 - COVERAGE_TOL)
            .map_or(self.eta.len(), |p| p + 1)
    }

    pub fn val_init_ids(&self) -> &[i64] {
        &self.ordered_ids[..self.full_coverage_len()]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["prefix_n", "eta_c"])?;
        for (i, e) in self.eta.iter().enumerate() {
            wr.write_record([(i + 1).to_string(), format!("{e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Indices of the lowest-id test attaining each coordinate's minimum and
/// maximum, de-duplicated, in order of first appearance.
pub fn extreme_seed(domain: &TestDomain) -> Vec<usize> {
    let mut seed = Vec::new();
    for k in 0..domain.dim() {
        let col = domain.x.column(k);
        let lo = (0..col.len()).min_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        let hi = (0..col.len()).min_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        for i in [lo, hi].into_iter().flatten() {
            if !seed.contains(&i) {
                seed.push(i);
            }
        }
    }
    seed
}

/// Greedy coverage ordering of all tests, starting from the extreme-value seed.
pub fn select_validation_init(tests: &[TestCase]) -> Result<CoverageTrace> {
    coverage_order(&TestDomain::from_tests(tests)?)
}

pub fn coverage_order(domain: &TestDomain) -> Result<CoverageTrace> {
    let n = domain.len();
    let r = domain.dim();
    if n < r + 2 {
        return Err(Error::InvalidInput(format!(
            "coverage ordering needs at least {} tests, got {n}",
            r + 2
        )));
    }
    let full = convex_hull_volume(&domain.u);
    if full.degenerate {
        return Err(Error::DegenerateHull);
    }

    let mut order = extreme_seed(domain);
    let start_len = order.len();
    let mut eta = Vec::with_capacity(n);
    let mut running = 0.0f64;
    for len in 1..=start_len {
        running = running.max(domain_coverage(domain, &order[..len], full.volume));
        eta.push(running);
    }

    let mut rest: Vec<usize> = (0..n).filter(|i| !order.contains(i)).collect();
    while !rest.is_empty() {
        let pick = if running >= 1.0 {
            // every candidate now yields 1.0: lowest id wins
            0
        } else {
            let scores: Vec<f64> = rest
                .par_iter()
                .map(|&k| {
                    let mut rows = order.clone();
                    rows.push(k);
                    domain_coverage(domain, &rows, full.volume)
                })
                .collect();
            argmax_first(&scores)
        };
        let k = rest.remove(pick);
        order.push(k);
        running = running.max(domain_coverage(domain, &order, full.volume));
        eta.push(running);
    }
    Ok(CoverageTrace {
        ordered_ids: order.iter().map(|&i| domain.ids[i]).collect(),
        eta,
        start_len,
    })
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// Result of the appearance-count selection of the initial inverse-UQ tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IuqInit {
    pub ids: Vec<i64>,
    /// `(test id, appearances)` for every test in the pool, id order.
    pub counts: Vec<(i64, usize)>,
}

/// Appearance-count selection over `pool` (indices into `domain`).
///
/// Every pool member starts one greedy discrepancy-minimizing run of length
/// `n_init`; members are ranked by how many runs contain them and the top
/// `n_init` are kept, skipping any within normalized distance `tau` of an
/// already chosen one.
pub fn select_iuq_init_in(
    domain: &TestDomain,
    pool: &[usize],
    n_init: usize,
    measure: DiscrepancyMeasure,
    tau: f64,
) -> Result<IuqInit> {
    if n_init < 2 {
        return Err(Error::InvalidInput(format!("initial inverse-UQ size must be >= 2, got {n_init}")));
    }
    if pool.len() <= n_init {
        return Err(Error::InvalidInput(format!(
            "pool of {} tests is not larger than the initial inverse-UQ size {n_init}",
            pool.len()
        )));
    }
    let mut pool = pool.to_vec();
    pool.sort_unstable();

    let runs: Vec<Vec<usize>> = pool
        .par_iter()
        .map(|&start| greedy_discrepancy_run(domain, &pool, vec![start], n_init, measure))
        .collect::<Result<_>>()?;

    let mut counts: HashMap<usize, usize> = pool.iter().map(|&i| (i, 0)).collect();
    for run in &runs {
        for i in run {
            *counts.get_mut(i).expect("pool member") += 1;
        }
    }
    let mut ranked = pool.clone();
    ranked.sort_by(|a, b| counts[b].cmp(&counts[a]).then(a.cmp(b)));

    let mut chosen: Vec<usize> = Vec::with_capacity(n_init);
    let mut skipped = Vec::new();
    for &i in &ranked {
        if chosen.len() == n_init {
            break;
        }
        let near = chosen.iter().any(|&j| {
            let d2: f64 = (0..domain.dim()).map(|k| (domain.u[(i, k)] - domain.u[(j, k)]).powi(2)).sum();
            d2.sqrt() <= tau
        });
        if near {
            skipped.push(i);
        } else {
            chosen.push(i);
        }
    }
    // only reachable when the pool is one tight cluster
    for i in skipped {
        if chosen.len() == n_init {
            break;
        }
        chosen.push(i);
    }

    Ok(IuqInit {
        ids: chosen.iter().map(|&i| domain.ids[i]).collect(),
        counts: pool.iter().map(|&i| (domain.ids[i], counts[&i])).collect(),
    })
}

/// Grows `set` from `pool` to `target` members, each step adding the pool
/// member that minimizes the discrepancy of the enlarged set.
fn greedy_discrepancy_run(
    domain: &TestDomain,
    pool: &[usize],
    mut set: Vec<usize>,
    target: usize,
    measure: DiscrepancyMeasure,
) -> Result<Vec<usize>> {
    while set.len() < target {
        let cands: Vec<usize> = pool.iter().copied().filter(|i| !set.contains(i)).collect();
        if cands.is_empty() {
            return Err(Error::InvalidInput("candidate pool exhausted".into()));
        }
        let k = cands[best_addition(domain, &set, &cands, measure)?];
        set.push(k);
    }
    Ok(set)
}

/// Position in `cands` of the candidate minimizing the discrepancy of
/// `set ∪ {candidate}`; ties go to the lowest position.
pub fn best_addition(
    domain: &TestDomain,
    set: &[usize],
    cands: &[usize],
    measure: DiscrepancyMeasure,
) -> Result<usize> {
    let scores: Vec<f64> = cands
        .par_iter()
        .map(|&k| {
            let mut rows = set.to_vec();
            rows.push(k);
            measure.eval_rows(&domain.u, &rows)
        })
        .collect::<Result<_>>()?;
    Ok(argmin_first(&scores))
}

/// Appearance-count selection from the tests in `rest`.
pub fn select_iuq_init(
    rest: &[TestCase],
    n_init: usize,
    measure: DiscrepancyMeasure,
    tau: f64,
) -> Result<IuqInit> {
    let domain = TestDomain::from_tests(rest)?;
    let pool: Vec<usize> = (0..domain.len()).collect();
    select_iuq_init_in(&domain, &pool, n_init, measure, tau)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsaConfig {
    pub alpha: f64,
    pub beta: f64,
    pub measure: DiscrepancyMeasure,
    /// Near-duplicate suppression radius in normalized coordinates.
    pub tau: f64,
}

impl Default for TsaConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            beta: 0.05,
            measure: DiscrepancyMeasure::WraparoundL2,
            tau: 0.05,
        }
    }
}

impl TsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta && self.beta < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "allocation fractions must satisfy 0 < beta < alpha < 1 (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config("tau must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    #[serde(rename = "IUQ")]
    Iuq,
    #[serde(rename = "VAL")]
    Val,
}

impl Assignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assignment::Iuq => "IUQ",
            Assignment::Val => "VAL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPartition {
    /// In selection order.
    pub iuq_ids: Vec<i64>,
    /// In id order.
    pub val_ids: Vec<i64>,
    pub alpha: f64,
    pub beta: f64,
    pub measure: DiscrepancyMeasure,
}

impl TestPartition {
    pub fn assignment(&self, id: i64) -> Option<Assignment> {
        if self.iuq_ids.contains(&id) {
            Some(Assignment::Iuq)
        } else if self.val_ids.contains(&id) {
            Some(Assignment::Val)
        } else {
            None
        }
    }

    /// `test_id,assignment` rows in ascending id order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows: Vec<(i64, Assignment)> = self
            .iuq_ids
            .iter()
            .map(|&i| (i, Assignment::Iuq))
            .chain(self.val_ids.iter().map(|&i| (i, Assignment::Val)))
            .collect();
        rows.sort_by_key(|r| r.0);
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["test_id", "assignment"])?;
        for (id, a) in rows {
            wr.write_record([id.to_string(), a.as_str().to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `test_id,assignment` rows. Inverse-UQ ids come back in id order,
    /// since the CSV does not record selection order.
    pub fn read_csv<R: Read>(r: R, alpha: f64, beta: f64, measure: DiscrepancyMeasure) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut iuq = Vec::new();
        let mut val = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let id: i64 = rec
                .get(0)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("partition row {}: bad test_id", line + 2)))?;
            match rec.get(1).map(str::trim) {
                Some("IUQ") => iuq.push(id),
                Some("VAL") => val.push(id),
                other => {
                    return Err(Error::Data(format!("partition row {}: bad assignment {other:?}", line + 2)))
                }
            }
        }
        Ok(Self { iuq_ids: iuq, val_ids: val, alpha, beta, measure })
    }
}

/// Everything the sequential allocation produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TsaOutcome {
    pub partition: TestPartition,
    pub trace: CoverageTrace,
    pub val_init_ids: Vec<i64>,
    pub iuq_init: IuqInit,
}

/// Full sequential allocation over the non-excluded tests.
pub fn sequential_tsa(tests: &[TestCase], cfg: &TsaConfig) -> Result<TsaOutcome> {
    cfg.validate()?;
    let domain = TestDomain::from_tests(tests)?;
    sequential_tsa_in(&domain, cfg)
}

pub fn sequential_tsa_in(domain: &TestDomain, cfg: &TsaConfig) -> Result<TsaOutcome> {
    cfg.validate()?;
    let n = domain.len();
    let n_iuq = fraction_count(n, cfg.alpha);
    let n_init = fraction_count(n, cfg.beta);
    if n_iuq <= n_init {
        return Err(Error::InvalidInput(format!(
            "inverse-UQ size {n_iuq} does not exceed the initial size {n_init}; nothing to add"
        )));
    }

    let trace = coverage_order(domain)?;
    let val_init_ids = trace.val_init_ids().to_vec();
    let val_init = domain.indices_of(&val_init_ids)?;
    let rest: Vec<usize> = (0..n).filter(|i| !val_init.contains(i)).collect();
    if rest.len() < n_iuq {
        return Err(Error::InvalidInput(format!(
            "only {} tests remain after the validation seed, {n_iuq} needed for inverse UQ",
            rest.len()
        )));
    }

    let iuq_init = select_iuq_init_in(domain, &rest, n_init, cfg.measure, cfg.tau)?;
    let mut iuq = domain.indices_of(&iuq_init.ids)?;
    let mut pool: Vec<usize> = rest.iter().copied().filter(|i| !iuq.contains(i)).collect();
    while iuq.len() < n_iuq {
        let pos = best_addition(domain, &iuq, &pool, cfg.measure)?;
        iuq.push(pool.remove(pos));
    }

    let val_ids = (0..n).filter(|i| !iuq.contains(i)).map(|i| domain.ids[i]).collect();
    Ok(TsaOutcome {
        partition: TestPartition {
            iuq_ids: iuq.iter().map(|&i| domain.ids[i]).collect(),
            val_ids,
            alpha: cfg.alpha,
            beta: cfg.beta,
            measure: cfg.measure,
        },
        trace,
        val_init_ids,
        iuq_init,
    })
}
