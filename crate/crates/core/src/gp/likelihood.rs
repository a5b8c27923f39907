use nalgebra::{Cholesky, DMatrix, DVector};

use super::SIGNAL_VARIANCE_FLOOR;

/// Profile likelihood with the mean and signal variance at their GLS estimates.
#[derive(Clone, Debug)]
pub struct ProfileFit {
    pub log_likelihood: f64,
    pub mean: f64,
    pub signal_variance: f64,
    /// Derivative with respect to each log lengthscale; empty unless requested.
    pub gradient: Vec<f64>,
}

fn scaled_rows(z: &DMatrix<f64>, ls: &[f64]) -> Vec<f64> {
    let (n, d) = z.shape();
    let mut s = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..d {
            s[i * d + k] = z[(i, k)] / ls[k];
        }
    }
    s
}

/// Correlation matrix `exp(-0.5 sum ((a-b)/l)^2)` plus `nugget` on the diagonal.
pub(crate) fn correlation_matrix(z: &DMatrix<f64>, ls: &[f64], nugget: f64) -> DMatrix<f64> {
    let (n, d) = z.shape();
    let s = scaled_rows(z, ls);
    let mut r = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let bj = &s[j * d..(j + 1) * d];
        r[(j, j)] = 1.0 + nugget;
        for i in (j + 1)..n {
            let bi = &s[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for k in 0..d {
                let t = bi[k] - bj[k];
                acc += t * t;
            }
            let c = (-0.5 * acc).exp();
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    r
}

/// `(L L^T)^-1` from the lower Cholesky factor, skipping the zero triangle.
fn spd_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let lt = l.transpose();
    let mut linv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let x = &mut linv.as_mut_slice()[j * n..(j + 1) * n];
        x[j] = 1.0 / lt[(j, j)];
        for i in (j + 1)..n {
            let row = &lt.as_slice()[i * n..i * n + i];
            let acc: f64 = row[j..i].iter().zip(&x[j..i]).map(|(a, b)| a * b).sum();
            x[i] = -acc / lt[(i, i)];
        }
    }
    linv.transpose() * &linv
}

/// Evaluates the concentrated log marginal likelihood of standardized outputs
/// `y` at normalized inputs `z`. Returns `None` when the kernel matrix is not
/// numerically positive definite.
pub fn profile_log_likelihood(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    log_ls: &[f64],
    nugget: f64,
    with_gradient: bool,
) -> Option<ProfileFit> {
    let (n, d) = z.shape();
    if log_ls.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let ls: Vec<f64> = log_ls.iter().map(|v| v.exp()).collect();
    let r = correlation_matrix(z, &ls, nugget);
    let chol = Cholesky::new(r.clone())?;
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    if !logdet.is_finite() {
        return None;
    }
    let ones = DVector::from_element(n, 1.0);
    let rinv1 = chol.solve(&ones);
    let rinvy = chol.solve(y);
    let denom = ones.dot(&rinv1);
    if !(denom > 0.0) {
        return None;
    }
    let mean = ones.dot(&rinvy) / denom;
    let a = &rinvy - &rinv1 * mean;
    let resid = y.map(|v| v - mean);
    let s2 = (resid.dot(&a) / n as f64).max(SIGNAL_VARIANCE_FLOOR);
    let nf = n as f64;
    let ll = -0.5 * nf * s2.ln() - 0.5 * logdet - 0.5 * nf * ((2.0 * std::f64::consts::PI).ln() + 1.0);
    if !ll.is_finite() {
        return None;
    }

    let mut gradient = Vec::new();
    if with_gradient {
        let rinv = spd_inverse(&l);
        gradient = vec![0.0; d];
        let s = scaled_rows(z, &ls);
        // dR/dlog(l_k) = R_ij * ((z_ik - z_jk) / l_k)^2 off the diagonal
        for j in 0..n {
            let bj = &s[j * d..(j + 1) * d];
            for i in (j + 1)..n {
                let w = (a[i] * a[j] / s2 - rinv[(i, j)]) * r[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let bi = &s[i * d..(i + 1) * d];
                for k in 0..d {
                    let t = bi[k] - bj[k];
                    gradient[k] += w * t * t;
                }
            }
        }
    }
    Some(ProfileFit { log_likelihood: ll, mean, signal_variance: s2, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, d) = (25, 3);
        let z = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| (3.0 * z[(i, 0)]).sin() + z[(i, 1)] * z[(i, 2)]);
        for _ in 0..20 {
            let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..0.5)).collect();
            let Some(base) = profile_log_likelihood(&z, &y, &p, 1e-6, true) else { continue };
            for k in 0..d {
                let h = 1e-5;
                let mut up = p.clone();
                up[k] += h;
                let mut dn = p.clone();
                dn[k] -= h;
                let fd = (profile_log_likelihood(&z, &y, &up, 1e-6, false).unwrap().log_likelihood
                    - profile_log_likelihood(&z, &y, &dn, 1e-6, false).unwrap().log_likelihood)
                    / (2.0 * h);
                let g = base.gradient[k];
                assert!((g - fd).abs() <= 1e-5 * fd.abs().max(1.0), "k={k} analytic={g} fd={fd}");
            }
        }
    }

    #[test]
    fn gls_mean_of_constant_shift() {
        let z = DMatrix::from_fn(6, 1, |i, _| i as f64 / 5.0);
        let y = DVector::from_element(6, 2.0);
        let pf = profile_log_likelihood(&z, &y, &[0.0], 1e-8, false).unwrap();
        assert!((pf.mean - 2.0).abs() < 1e-8);
        assert_eq!(pf.signal_variance, SIGNAL_VARIANCE_FLOOR);
    }
}
