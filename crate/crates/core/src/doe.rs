//! Space-filling designs and L2-type uniformity measures on the unit hypercube.
//!
//! Designs are stored row-major in a [`DMatrix`]: one row per point, one column
//! per dimension.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that points lie inside their declared bounds.
const BOUNDS_TOL: f64 = 1e-12;

/// A design together with the per-dimension box it lives in.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub points: DMatrix<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl DesignMatrix {
    pub fn new(points: DMatrix<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::EmptyDesign);
        }
        if bounds.len() != points.ncols() {
            return Err(Error::DimensionMismatch {
                expected: points.ncols(),
                found: bounds.len(),
            });
        }
        // validates bounds and containment
        normalize_to_unit_cube(&points, &bounds)?;
        Ok(Self { points, bounds })
    }

    /// Bounding box of the points themselves.
    pub fn from_points(points: DMatrix<f64>) -> Result<Self> {
        let bounds = column_ranges(&points)?;
        Self::new(points, bounds)
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn normalized(&self) -> DMatrix<f64> {
        normalize_to_unit_cube(&self.points, &self.bounds).expect("validated at construction")
    }
}

/// Per-column (min, max) of a matrix.
pub fn column_ranges(points: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    if points.nrows() == 0 {
        return Err(Error::EmptyDesign);
    }
    Ok(points
        .column_iter()
        .map(|c| (c.min(), c.max()))
        .collect())
}

/// Affine map of each coordinate onto `[0, 1]` using `(x - lower) / (upper - lower)`.
pub fn normalize_to_unit_cube(points: &DMatrix<f64>, bounds: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    if bounds.len() != points.ncols() {
        return Err(Error::DimensionMismatch {
            expected: points.ncols(),
            found: bounds.len(),
        });
    }
    for (dim, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) {
            return Err(Error::DegenerateBound { dim });
        }
    }
    let mut out = points.clone();
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        let width = hi - lo;
        for i in 0..points.nrows() {
            let x = points[(i, k)];
            if !x.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite coordinate at row {i}, dim {k}")));
            }
            let u = (x - lo) / width;
            if u < -BOUNDS_TOL || u > 1.0 + BOUNDS_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {i} dim {k}: value {x} outside bounds ({lo}, {hi})"
                )));
            }
            out[(i, k)] = u.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Which uniformity measure drives test selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyMeasure {
    CenteredL2,
    #[default]
    WraparoundL2,
}

impl DiscrepancyMeasure {
    pub fn eval(self, u: &DMatrix<f64>) -> Result<f64> {
        match self {
            Self::CenteredL2 => centered_l2_discrepancy(u),
            Self::WraparoundL2 => wraparound_l2_discrepancy(u),
        }
    }

    /// Same as [`eval`](Self::eval) on the rows of `u` picked by `rows`.
    pub fn eval_rows(self, u: &DMatrix<f64>, rows: &[usize]) -> Result<f64> {
        self.eval(&u.select_rows(rows))
    }
}

impl std::str::FromStr for DiscrepancyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "centeredl2" | "centered" | "cd2" => Ok(Self::CenteredL2),
            "wraparoundl2" | "wraparound" | "wd2" => Ok(Self::WraparoundL2),
            other => Err(Error::Config(format!("unknown discrepancy measure `{other}`"))),
        }
    }
}

fn check_unit(u: &DMatrix<f64>) -> Result<()> {
    if u.nrows() == 0 || u.ncols() == 0 {
        return Err(Error::EmptyDesign);
    }
    if let Some(bad) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("coordinate {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Squared centered L2 discrepancy of a design already mapped to `[0, 1]^d`.
pub fn centered_l2_discrepancy(u: &DMatrix<f64>) -> Result<f64> {
    check_unit(u)?;
    let (n, d) = u.shape();
    let nf = n as f64;

    let centred = u.map(|v| (v - 0.5).abs());
    let mut single = 0.0;
    for i in 0..n {
        let mut prod = 1.0;
        for k in 0..d {
            let a = centred[(i, k)];
            prod *= 1.0 + 0.5 * a - 0.5 * a * a;
        }
        single += prod;
    }
    let mut pair = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut prod = 1.0;
            for k in 0..d {
                prod *= 1.0 + 0.5 * centred[(i, k)] + 0.5 * centred[(j, k)]
                    - 0.5 * (u[(i, k)] - u[(j, k)]).abs();
            }
            pair += prod;
        }
    }
    Ok((13.0f64 / 12.0).powi(d as i32) - 2.0 / nf * single + pair / (nf * nf))
}

/// Squared wrap-around L2 discrepancy with the constant term *added*:
/// `(4/3)^d + 1/n^2 sum_ij prod_k (3/2 - |du| (1 - |du|))`.
///
/// The usual textbook form subtracts `(4/3)^d`. The constant does not depend
/// on the points, so argmin comparisons between designs are unaffected.
pub fn wraparound_l2_discrepancy(u: &DMatrix<f64>) -> Result<f64> {
    check_unit(u)?;
    let (n, d) = u.shape();
    let nf = n as f64;
    let mut pair = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut prod = 1.0;
            for k in 0..d {
                let du = (u[(i, k)] - u[(j, k)]).abs();
                prod *= 1.5 - du * (1.0 - du);
            }
            pair += prod;
        }
    }
    Ok((4.0f64 / 3.0).powi(d as i32) + pair / (nf * nf))
}

/// Options for [`maximin_lhs_with`].
#[derive(Clone, Debug)]
pub struct LhsOptions {
    pub n_restarts: usize,
    /// Uniform placement inside each stratum; stratum centres otherwise.
    pub jitter: bool,
    /// Greedy column-element swaps after each restart, for up to
    /// [`SWAP_LIMIT`] points.
    pub improve: bool,
}

impl Default for LhsOptions {
    fn default() -> Self {
        Self {
            n_restarts: 50,
            jitter: true,
            improve: true,
        }
    }
}

/// Largest design that [`LhsOptions::improve`] applies to.
pub const SWAP_LIMIT: usize = 128;

/// Plain random Latin hypercube on `[0, 1]^d`.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, jitter: bool, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, d);
    let nf = n as f64;
    for k in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates; kept explicit so the stream layout is stable
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        for (i, &stratum) in perm.iter().enumerate() {
            let offset = if jitter { rng.random::<f64>() } else { 0.5 };
            let mut v = (stratum as f64 + offset) / nf;
            if (v * nf).floor() as usize != stratum {
                v = (stratum as f64 + 0.5) / nf;
            }
            out[(i, k)] = v;
        }
    }
    out
}

/// Maximin Latin hypercube with the default options and the given restart count.
///
/// Restart 0 consumes the RNG exactly like [`latin_hypercube`] seeded the same
/// way, so the result is never worse than that plain design.
pub fn maximin_lhs(n: usize, d: usize, n_restarts: usize, seed: u64) -> Result<DMatrix<f64>> {
    let opts = LhsOptions {
        n_restarts,
        ..LhsOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    maximin_lhs_with(n, d, &opts, &mut rng)
}

pub fn maximin_lhs_with<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    opts: &LhsOptions,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n < 2 || d < 1 {
        return Err(Error::InvalidInput(format!("maximin LHS needs n >= 2 and d >= 1, got n={n}, d={d}")));
    }
    let restarts = opts.n_restarts.max(1);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..restarts {
        let mut cand = latin_hypercube(n, d, opts.jitter, rng);
        let score = if opts.improve && n <= SWAP_LIMIT {
            improve_by_swaps(&mut cand)
        } else {
            min_pairwise_sq_distance(&cand)
        };
        // strict improvement only: ties keep the lowest restart index
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, cand));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Smallest squared Euclidean distance between two distinct rows.
pub fn min_pairwise_sq_distance(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.min(sq_dist(points, i, j));
        }
    }
    best
}

pub fn min_pairwise_distance(points: &DMatrix<f64>) -> f64 {
    min_pairwise_sq_distance(points).sqrt()
}

fn sq_dist(p: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..p.ncols()).map(|k| (p[(i, k)] - p[(j, k)]).powi(2)).sum()
}

/// Greedy swaps of single column entries between two rows, accepted while they
/// strictly raise the minimum pairwise distance. Only swaps touching the current
/// closest pair can raise the minimum, so candidates are restricted to those.
fn improve_by_swaps(p: &mut DMatrix<f64>) -> f64 {
    let (n, d) = p.shape();
    let mut dist = DMatrix::<f64>::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(p, i, j);
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    // smallest 2n pair distances, ascending; pairs touching two given rows
    // number at most 2n - 3, so the list always holds one that touches neither
    let smallest_pairs = |dist: &DMatrix<f64>| {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push((dist[(i, j)], i, j));
            }
        }
        let keep = (2 * n).min(pairs.len());
        if keep < pairs.len() {
            pairs.select_nth_unstable_by(keep, |a, b| a.0.total_cmp(&b.0));
            pairs.truncate(keep);
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        pairs
    };

    let max_passes = 10 * n * d;
    let mut pairs = smallest_pairs(&dist);
    let mut row_i = vec![0.0; n];
    let mut row_j = vec![0.0; n];
    for _ in 0..max_passes {
        let (cur_min, a, b) = pairs[0];
        let mut best_move: Option<(f64, usize, usize, usize)> = None;
        for &i in &[a, b] {
            for j in 0..n {
                if j == i {
                    continue;
                }
                // minimum over pairs touching neither i nor j
                let rest = pairs
                    .iter()
                    .find(|&&(_, s, t)| s != i && s != j && t != i && t != j)
                    .map_or(f64::INFINITY, |q| q.0);
                if rest <= cur_min {
                    continue;
                }
                for k in 0..d {
                    let (xi, xj) = (p[(i, k)], p[(j, k)]);
                    let mut m = rest;
                    for l in 0..n {
                        if l == i || l == j {
                            continue;
                        }
                        let xl = p[(l, k)];
                        row_i[l] = dist[(i, l)] - (xi - xl).powi(2) + (xj - xl).powi(2);
                        row_j[l] = dist[(j, l)] - (xj - xl).powi(2) + (xi - xl).powi(2);
                        m = m.min(row_i[l]).min(row_j[l]);
                    }
                    m = m.min(dist[(i, j)]);
                    if m > cur_min && best_move.map_or(true, |bm| m > bm.0) {
                        best_move = Some((m, i, j, k));
                    }
                }
            }
        }
        let Some((_, i, j, k)) = best_move else { break };
        let tmp = p[(i, k)];
        p[(i, k)] = p[(j, k)];
        p[(j, k)] = tmp;
        for l in 0..n {
            if l == i || l == j {
                continue;
            }
            let di = sq_dist(p, i, l);
            let dj = sq_dist(p, j, l);
            dist[(i, l)] = di;
            dist[(l, i)] = di;
            dist[(j, l)] = dj;
            dist[(l, j)] = dj;
        }
        pairs = smallest_pairs(&dist);
    }
    pairs[0].0
}

/// True when every column places exactly one point in each of the `n` strata.
pub fn is_latin(u: &DMatrix<f64>) -> bool {
    let n = u.nrows();
    u.column_iter().all(|col| {
        let mut seen = vec![false; n];
        col.iter().all(|&v| {
            let s = (v * n as f64).floor() as isize;
            if s < 0 || s >= n as isize || seen[s as usize] {
                return false;
            }
            seen[s as usize] = true;
            true
        })
    })
}

/// Scale unit-cube coordinates into the given box.
pub fn scale_from_unit(u: &DMatrix<f64>, bounds: &[(f64, f64)]) -> DMatrix<f64> {
    let mut out = u.clone();
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        for i in 0..u.nrows() {
            out[(i, k)] = lo + (hi - lo) * u[(i, k)];
        }
    }
    out
}
