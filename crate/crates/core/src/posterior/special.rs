//! Modified Bessel functions and the trigamma function.

/// `exp(-|z|) I0(z)`.
pub fn bessel_i0e(z: f64) -> f64 {
    let z = z.abs();
    if z <= 30.0 {
        series_i(z, 0) * (-z).exp()
    } else {
        asymptotic_ie(z, 0.0)
    }
}

/// `exp(-|z|) I1(z)` for `z >= 0`.
pub fn bessel_i1e(z: f64) -> f64 {
    let a = z.abs();
    let v = if a <= 30.0 { series_i(a, 1) * (-a).exp() } else { asymptotic_ie(a, 4.0) };
    v.copysign(z)
}

/// `ln I0(z)` without overflow.
pub fn ln_bessel_i0(z: f64) -> f64 {
    let a = z.abs();
    bessel_i0e(a).ln() + a
}

fn series_i(z: f64, order: u32) -> f64 {
    // sum (z/2)^(2k+n) / (k! (k+n)!)
    let h = 0.5 * z;
    let mut term = if order == 0 { 1.0 } else { h };
    let mut sum = term;
    let q = h * h;
    for k in 1..500 {
        term *= q / (k as f64 * (k + order) as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

// Hankel expansion; mu = 4 n^2.
fn asymptotic_ie(z: f64, mu: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * z);
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * z).sqrt()
}

/// Derivative of the digamma function.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}
