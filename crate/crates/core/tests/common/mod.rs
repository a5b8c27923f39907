#![allow(dead_code)]

use modbayes::gp::{GpModel, Normalization};
use modbayes::tsa::{TestDomain, TsaOutcome};
use nalgebra::DMatrix;

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Centered L2 discrepancy by direct summation.
pub fn cd2(u: &[Vec<f64>]) -> f64 {
    let n = u.len() as f64;
    let d = u[0].len() as i32;
    let mut s1 = 0.0;
    for p in u {
        s1 += p.iter().map(|&x| 1.0 + 0.5 * (x - 0.5).abs() - 0.5 * (x - 0.5).powi(2)).product::<f64>();
    }
    let mut s2 = 0.0;
    for p in u {
        for q in u {
            s2 += p
                .iter()
                .zip(q)
                .map(|(&a, &b)| 1.0 + 0.5 * (a - 0.5).abs() + 0.5 * (b - 0.5).abs() - 0.5 * (a - b).abs())
                .product::<f64>();
        }
    }
    (13.0f64 / 12.0).powi(d) - 2.0 / n * s1 + s2 / (n * n)
}

/// Wrap-around L2 discrepancy by direct summation.
pub fn wd2(u: &[Vec<f64>]) -> f64 {
    let n = u.len() as f64;
    let d = u[0].len() as i32;
    let mut s = 0.0;
    for p in u {
        for q in u {
            s += p
                .iter()
                .zip(q)
                .map(|(&a, &b)| {
                    let t = (a - b).abs();
                    1.5 - t * (1.0 - t)
                })
                .product::<f64>();
        }
    }
    (4.0f64 / 3.0).powi(d) + s / (n * n)
}

/// Area of the convex hull of 2D points (monotone chain, shoelace).
pub fn hull_area(pts: &[[f64; 2]]) -> f64 {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return 0.0;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let it: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in it {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let mut a = 0.0;
    for i in 0..hull.len() {
        let (u, v) = (hull[i], hull[(i + 1) % hull.len()]);
        a += u[0] * v[1] - v[0] * u[1];
    }
    0.5 * a.abs()
}

/// Min-max normalization over all rows.
pub fn normalize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let lo: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    x.iter().map(|r| (0..d).map(|k| (r[k] - lo[k]) / (hi[k] - lo[k])).collect()).collect()
}

fn first_max(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn first_min(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

pub type Disc = fn(&[Vec<f64>]) -> f64;

/// Replays every greedy choice of a two-dimensional allocation against
/// exhaustive search with the oracle measures. Returns the number of picks
/// checked.
pub fn replay_tsa(ids: &[i64], x: &[Vec<f64>], out: &TsaOutcome, disc: Disc) -> Result<usize, String> {
    let u = normalize(x);
    let pos = |id: i64| ids.iter().position(|&i| i == id).unwrap();
    let pt = |i: usize| [u[i][0], u[i][1]];
    let full = hull_area(&(0..u.len()).map(pt).collect::<Vec<_>>());
    let cover = |set: &[usize]| {
        let eta = hull_area(&set.iter().map(|&i| pt(i)).collect::<Vec<_>>()) / full;
        if eta >= 1.0 - 1e-9 {
            1.0
        } else {
            eta
        }
    };
    let mut checked = 0;

    // coverage ordering
    let order: Vec<usize> = out.trace.ordered_ids.iter().map(|&id| pos(id)).collect();
    for step in out.trace.start_len..order.len() {
        let chosen = &order[..step];
        let mut rest: Vec<usize> = (0..u.len()).filter(|i| !chosen.contains(i)).collect();
        rest.sort_by_key(|&i| ids[i]);
        let scores: Vec<f64> = rest
            .iter()
            .map(|&k| {
                let mut s = chosen.to_vec();
                s.push(k);
                cover(&s)
            })
            .collect();
        let want = rest[first_max(&scores)];
        let got_score = scores[rest.iter().position(|&k| k == order[step]).unwrap()];
        if (got_score - scores[first_max(&scores)]).abs() > 1e-12 {
            return Err(format!("coverage step {step}: picked {} but {} is better", ids[order[step]], ids[want]));
        }
        checked += 1;
    }
    for (n, e) in out.trace.eta.iter().enumerate() {
        let want = (1..=n + 1).map(|m| cover(&order[..m])).fold(0.0, f64::max);
        if (e - want).abs() > 1e-9 {
            return Err(format!("coverage of prefix {}: {e} vs {want}", n + 1));
        }
    }

    // appearance counts over discrepancy-greedy runs
    let val_init: Vec<usize> = out.val_init_ids.iter().map(|&id| pos(id)).collect();
    let mut pool: Vec<usize> = (0..u.len()).filter(|i| !val_init.contains(i)).collect();
    pool.sort_by_key(|&i| ids[i]);
    let n_init = out.iuq_init.ids.len();
    let eval = |set: &[usize]| disc(&set.iter().map(|&i| u[i].clone()).collect::<Vec<_>>());
    let mut counts = vec![0usize; u.len()];
    for &start in &pool {
        let mut set = vec![start];
        while set.len() < n_init {
            let cands: Vec<usize> = pool.iter().copied().filter(|i| !set.contains(i)).collect();
            let scores: Vec<f64> = cands
                .iter()
                .map(|&k| {
                    let mut s = set.clone();
                    s.push(k);
                    eval(&s)
                })
                .collect();
            set.push(cands[first_min(&scores)]);
            checked += 1;
        }
        for &i in &set {
            counts[i] += 1;
        }
    }
    for &(id, c) in &out.iuq_init.counts {
        if counts[pos(id)] != c {
            return Err(format!("appearance count of test {id}: {c} vs {}", counts[pos(id)]));
        }
    }
    let mut ranked = pool.clone();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(ids[a].cmp(&ids[b])));
    let top: Vec<i64> = ranked[..n_init].iter().map(|&i| ids[i]).collect();
    if top != out.iuq_init.ids {
        return Err(format!("initial inverse-UQ set {:?} vs {:?}", out.iuq_init.ids, top));
    }

    // sequential inverse-UQ growth
    let iuq: Vec<usize> = out.partition.iuq_ids.iter().map(|&id| pos(id)).collect();
    for step in n_init..iuq.len() {
        let chosen = &iuq[..step];
        let cands: Vec<usize> = pool.iter().copied().filter(|i| !chosen.contains(i)).collect();
        let scores: Vec<f64> = cands
            .iter()
            .map(|&k| {
                let mut s = chosen.to_vec();
                s.push(k);
                eval(&s)
            })
            .collect();
        let best = first_min(&scores);
        let got = cands.iter().position(|&k| k == iuq[step]).ok_or("pick outside the pool")?;
        if (scores[got] - scores[best]).abs() > 1e-12 {
            return Err(format!("inverse-UQ step {step}: picked {} but {} is better", ids[iuq[step]], ids[cands[best]]));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Leave-one-out residuals by refitting without each point, keeping the
/// lengthscales and normalization of `model`.
pub fn loo_by_refit(model: &GpModel, x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let norm: Normalization = model.normalization().clone();
    let ls = model.lengthscales().to_vec();
    let nugget = model.hyperparameters().nugget;
    (0..n)
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let xs = x.select_rows(&keep);
            let ys: Vec<f64> = keep.iter().map(|&j| y[j]).collect();
            let m = GpModel::with_lengthscales(&xs, &ys, norm.clone(), ls.clone(), nugget).unwrap();
            let (mu, _) = m.predict_one(&x.row(i).iter().copied().collect::<Vec<_>>()).unwrap();
            y[i] - mu
        })
        .collect()
}

/// Twelve two-dimensional tests: four corners and eight interior points.
pub fn twelve_tests() -> (Vec<i64>, Vec<Vec<f64>>) {
    let x = vec![
        vec![0.42, 0.37],
        vec![0.0, 0.0],
        vec![0.81, 0.22],
        vec![0.17, 0.64],
        vec![1.0, 0.0],
        vec![0.55, 0.88],
        vec![0.29, 0.12],
        vec![1.0, 1.0],
        vec![0.68, 0.53],
        vec![0.09, 0.31],
        vec![0.0, 1.0],
        vec![0.91, 0.74],
    ];
    ((1..=12).collect(), x)
}

pub fn tests_from(ids: &[i64], x: &[Vec<f64>]) -> Vec<modbayes::dataio::TestCase> {
    ids.iter().zip(x).map(|(&id, r)| modbayes::dataio::TestCase::new(id, r.clone(), vec![0.0])).collect()
}

pub fn domain(ids: &[i64], x: &[Vec<f64>]) -> TestDomain {
    let m = DMatrix::from_fn(x.len(), x[0].len(), |i, k| x[i][k]);
    TestDomain::new(ids.to_vec(), m).unwrap()
}

/// Volume of the convex hull of 3D points in general position by facet
/// enumeration: every triple with all points on one side is a facet.
pub fn hull_volume_3d(p: &[[f64; 3]]) -> f64 {
    let n = p.len();
    let c = [0, 1, 2].map(|k| p.iter().map(|q| q[k]).sum::<f64>() / n as f64);
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut vol = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let nrm = cross(sub(p[j], p[i]), sub(p[k], p[i]));
                let side: Vec<f64> = (0..n).map(|l| dot(nrm, sub(p[l], p[i]))).collect();
                let scale = dot(nrm, nrm).sqrt();
                let tol = 1e-12 * scale;
                if side.iter().all(|&s| s <= tol) || side.iter().all(|&s| s >= -tol) {
                    vol += dot(nrm, sub(p[i], c)).abs() / 6.0;
                }
            }
        }
    }
    vol
}
