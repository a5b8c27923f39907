//! Exact convex hulls in low dimension by incremental beneath-beyond insertion.
//!
//! The hull boundary is kept as a list of simplicial facets, each with an
//! outward unit normal. Volume is the sum of the cones from an interior point
//! over every facet.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

/// Volume of a point set's hull together with a degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HullVolume {
    pub volume: f64,
    /// Set when the points do not span a full-dimensional simplex.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
struct Facet {
    verts: Vec<usize>,
    normal: DVector<f64>,
    offset: f64,
}

impl Facet {
    fn signed_distance(&self, p: &DVector<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

#[derive(Clone, Debug)]
pub struct ConvexHull {
    dim: usize,
    points: Vec<DVector<f64>>,
    facets: Vec<Facet>,
    interior: DVector<f64>,
    eps: f64,
    degenerate: bool,
    // only used when dim == 1
    interval: (f64, f64),
}

impl ConvexHull {
    /// Builds the hull of the rows of `points`.
    pub fn new(points: &DMatrix<f64>) -> Self {
        let dim = points.ncols();
        let pts: Vec<DVector<f64>> = points.row_iter().map(|r| r.transpose()).collect();
        let scale = points
            .column_iter()
            .map(|c| if c.is_empty() { 0.0 } else { c.max() - c.min() })
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let eps = 1e-10 * scale;
        let mut hull = Self {
            dim,
            points: pts,
            facets: Vec::new(),
            interior: DVector::zeros(dim),
            eps,
            degenerate: true,
            interval: (0.0, 0.0),
        };
        if dim == 0 || hull.points.len() < dim + 1 {
            return hull;
        }
        if dim == 1 {
            let c = points.column(0);
            hull.interval = (c.min(), c.max());
            hull.degenerate = c.max() - c.min() <= eps;
            return hull;
        }
        let Some(simplex) = hull.initial_simplex() else {
            return hull;
        };
        hull.degenerate = false;
        hull.interior = simplex
            .iter()
            .fold(DVector::zeros(dim), |acc, &i| acc + &hull.points[i])
            / (dim + 1) as f64;
        for skip in 0..simplex.len() {
            let verts: Vec<usize> = simplex
                .iter()
                .enumerate()
                .filter_map(|(k, &v)| (k != skip).then_some(v))
                .collect();
            let f = hull.make_facet(verts);
            hull.facets.push(f);
        }
        let in_simplex: Vec<bool> = (0..hull.points.len()).map(|i| simplex.contains(&i)).collect();
        for i in 0..hull.points.len() {
            if !in_simplex[i] {
                hull.insert(i);
            }
        }
        hull
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn volume(&self) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        if self.dim == 1 {
            return self.interval.1 - self.interval.0;
        }
        let d = self.dim;
        let fact: f64 = (1..=d).map(|k| k as f64).product();
        let mut total = 0.0;
        let mut m = DMatrix::<f64>::zeros(d, d);
        for f in &self.facets {
            for (r, &v) in f.verts.iter().enumerate() {
                let diff = &self.points[v] - &self.interior;
                m.set_row(r, &diff.transpose());
            }
            total += m.determinant().abs();
        }
        total / fact
    }

    /// Point-in-hull test (boundary counts as inside).
    pub fn contains(&self, p: &[f64]) -> bool {
        if self.degenerate || p.len() != self.dim {
            return false;
        }
        if self.dim == 1 {
            return p[0] >= self.interval.0 - self.eps && p[0] <= self.interval.1 + self.eps;
        }
        let p = DVector::from_column_slice(p);
        self.facets.iter().all(|f| f.signed_distance(&p) <= self.eps)
    }

    /// Greedy choice of `dim + 1` affinely independent points, far apart.
    fn initial_simplex(&self) -> Option<Vec<usize>> {
        let n = self.points.len();
        let first = (0..n)
            .min_by(|&a, &b| self.points[a][0].total_cmp(&self.points[b][0]).then(a.cmp(&b)))?;
        let mut chosen = vec![first];
        let mut basis: Vec<DVector<f64>> = Vec::new();
        while chosen.len() < self.dim + 1 {
            let origin = &self.points[first];
            let mut best: Option<(f64, usize, DVector<f64>)> = None;
            for i in 0..n {
                if chosen.contains(&i) {
                    continue;
                }
                let mut r = &self.points[i] - origin;
                for b in &basis {
                    let c = b.dot(&r);
                    r -= b * c;
                }
                let dist = r.norm();
                if best.as_ref().map_or(true, |(bd, _, _)| dist > *bd) {
                    best = Some((dist, i, r));
                }
            }
            let (dist, i, r) = best?;
            if dist <= self.eps {
                return None;
            }
            basis.push(r / dist);
            chosen.push(i);
        }
        Some(chosen)
    }

    fn make_facet(&self, verts: Vec<usize>) -> Facet {
        let d = self.dim;
        let base = &self.points[verts[0]];
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
        for &v in &verts[1..] {
            let mut r = &self.points[v] - base;
            for b in &basis {
                let c = b.dot(&r);
                r -= b * c;
            }
            let norm = r.norm();
            if norm > 0.0 {
                basis.push(r / norm);
            }
        }
        // orthogonal complement: project each axis out and keep the largest residual
        let mut normal = DVector::zeros(d);
        let mut best = -1.0;
        for axis in 0..d {
            let mut e = DVector::zeros(d);
            e[axis] = 1.0;
            for b in &basis {
                let c = b.dot(&e);
                e -= b * c;
            }
            let norm = e.norm();
            if norm > best {
                best = norm;
                normal = e / norm;
            }
        }
        let mut offset = normal.dot(base);
        if normal.dot(&self.interior) - offset > 0.0 {
            normal = -normal;
            offset = -offset;
        }
        Facet { verts, normal, offset }
    }

    fn insert(&mut self, idx: usize) {
        let p = self.points[idx].clone();
        let visible: Vec<bool> = self
            .facets
            .iter()
            .map(|f| f.signed_distance(&p) > self.eps)
            .collect();
        if !visible.iter().any(|&v| v) {
            return;
        }
        let mut ridge_count: HashMap<Vec<usize>, usize> = HashMap::new();
        for (f, _) in self.facets.iter().zip(&visible).filter(|(_, &v)| v) {
            for skip in 0..f.verts.len() {
                let mut ridge: Vec<usize> = f
                    .verts
                    .iter()
                    .enumerate()
                    .filter_map(|(k, &v)| (k != skip).then_some(v))
                    .collect();
                ridge.sort_unstable();
                *ridge_count.entry(ridge).or_insert(0) += 1;
            }
        }
        let mut horizon: Vec<Vec<usize>> = ridge_count
            .into_iter()
            .filter_map(|(r, c)| (c == 1).then_some(r))
            .collect();
        horizon.sort();
        let mut keep = visible.iter().map(|v| !v);
        self.facets.retain(|_| keep.next().unwrap());
        for mut ridge in horizon {
            ridge.push(idx);
            let f = self.make_facet(ridge);
            self.facets.push(f);
        }
    }
}

/// Volume of the convex hull of the rows of `points`.
pub fn convex_hull_volume(points: &DMatrix<f64>) -> HullVolume {
    let hull = ConvexHull::new(points);
    HullVolume {
        volume: hull.volume(),
        degenerate: hull.is_degenerate(),
    }
}
