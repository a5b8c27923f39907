//! Analytic void-fraction simulator with a known ground truth.
//!
//! Four design variables (pressure, mass flow, power, inlet temperature),
//! five multiplicative model parameters and four axial void-fraction outputs
//! ordered from the lowest to the highest elevation.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::TestCase;
use crate::doe::{maximin_lhs, scale_from_unit};
use crate::error::{Error, Result};
use crate::modular_bayes::{PriorSpec, Simulator};

pub const DESIGN_DIM: usize = 4;
pub const QOI_COUNT: usize = 4;
pub const PARAM_DIM: usize = 5;

/// Relative axial positions of the four outputs.
pub const ELEVATIONS: [f64; QOI_COUNT] = [0.2, 0.45, 0.7, 0.95];

/// Pressure (MPa), mass flow (t/h), power (MW), inlet temperature (C).
pub const DESIGN_BOX: [(f64, f64); DESIGN_DIM] = [(3.9, 8.7), (10.0, 70.0), (0.6, 7.3), (230.0, 290.0)];

pub const DESIGN_NAMES: [&str; DESIGN_DIM] = ["pressure", "flow", "power", "inlet_temp"];

// Each parameter's weight oscillates across the design box, so the
// parameter response differs from one test condition to the next.
const WEIGHT_FREQ: [[f64; DESIGN_DIM]; PARAM_DIM] = [
    [1.3, -0.9, 0.7, 0.5],
    [-0.6, 1.1, 0.9, -0.8],
    [0.8, 0.7, -1.2, 0.6],
    [-1.0, -0.5, 0.6, 1.2],
    [0.5, 1.0, 0.8, -1.1],
];
const WEIGHT_PHASE: [f64; PARAM_DIM] = [0.1, 0.35, 0.6, 0.8, 0.25];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub theta_true: Vec<f64>,
    /// Multiplier on the discrepancy term; 0 disables it.
    pub bias_amplitude: f64,
    pub noise_rel: f64,
    pub n_tests: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            theta_true: vec![1.0; PARAM_DIM],
            bias_amplitude: 0.0,
            noise_rel: 0.02,
            n_tests: 78,
            seed: 2024,
        }
    }
}

impl ToySpec {
    pub fn qoi_count(&self) -> usize {
        QOI_COUNT
    }

    pub fn design_dim(&self) -> usize {
        DESIGN_DIM
    }

    pub fn validate(&self, prior: &PriorSpec) -> Result<()> {
        if self.theta_true.len() != PARAM_DIM || prior.dim() != PARAM_DIM {
            return Err(Error::Config(format!("the toy model has {PARAM_DIM} parameters")));
        }
        if !prior.contains(&self.theta_true) {
            return Err(Error::Config("theta_true lies outside the prior box".into()));
        }
        if !(self.noise_rel >= 0.0) || !self.bias_amplitude.is_finite() {
            return Err(Error::Config("noise_rel must be nonnegative and bias_amplitude finite".into()));
        }
        if self.n_tests < 10 {
            return Err(Error::Config("the toy corpus needs at least 10 tests".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ToyModel;

fn unit(x: &[f64]) -> [f64; DESIGN_DIM] {
    let mut u = [0.0; DESIGN_DIM];
    for k in 0..DESIGN_DIM {
        let (lo, hi) = DESIGN_BOX[k];
        u[k] = (x[k] - lo) / (hi - lo);
    }
    u
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl ToyModel {
    /// Void fractions (%) at the four elevations.
    pub fn simulate(&self, x: &[f64], theta: &[f64]) -> [f64; QOI_COUNT] {
        let u = unit(x);
        let [up, ug, uq, ut] = u;
        let t = |k: usize| theta[k].max(0.0);
        let d = |k: usize| t(k) - 1.0;
        // heat input per unit flow, and the subcooling to remove first
        let drive = (0.5 + uq) / (0.8 + 0.7 * ug);
        let subcool = (0.6 - 0.35 * ut) * (1.0 - 0.2 * up);
        let effect = [
            d(0) - 0.05 * d(0) * d(0),
            d(1) + 0.05 * d(1) * d(1),
            d(2) - 0.075 * d(2) * d(2),
            d(3) - 0.05 * d(3) * d(3),
            d(4) * (t(0) + 1.0) / (1.5 * (t(0) + 2.0)),
        ];
        let mut shift = 0.0;
        for k in 0..PARAM_DIM {
            let phase: f64 = WEIGHT_FREQ[k].iter().zip(&u).map(|(f, v)| f * v).sum::<f64>() + WEIGHT_PHASE[k];
            shift += (0.5 + 0.9 * (TAU * phase).sin()) * effect[k];
        }
        let mut y = [0.0; QOI_COUNT];
        for (j, &h) in ELEVATIONS.iter().enumerate() {
            let g = 0.6 * (h * drive - subcool) - 0.15 + 0.1 * shift;
            y[j] = 100.0 * logistic(g);
        }
        y
    }

    /// Smooth discrepancy term of a few void-% that depends on `x` only.
    pub fn bias(&self, x: &[f64]) -> [f64; QOI_COUNT] {
        let [up, ug, uq, ut] = unit(x);
        let mut b = [0.0; QOI_COUNT];
        for (j, &h) in ELEVATIONS.iter().enumerate() {
            b[j] = 5.0 * (0.8 * (up - 0.5) - 1.2 * (ug - 0.5) * (uq - 0.5) + 0.6 * h * (ut - 0.3) + 0.3 * h);
        }
        b
    }
}

impl Simulator for ToyModel {
    fn n_outputs(&self) -> usize {
        QOI_COUNT
    }

    fn simulate(&self, test_id: i64, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        if x.len() != DESIGN_DIM || theta.len() != PARAM_DIM {
            return Err(Error::Simulator {
                test_id,
                reason: format!("expected {DESIGN_DIM} design variables and {PARAM_DIM} parameters"),
            });
        }
        if x.iter().chain(theta).any(|v| !v.is_finite()) {
            return Err(Error::Simulator { test_id, reason: "non-finite input".into() });
        }
        Ok(ToyModel::simulate(self, x, theta).to_vec())
    }
}

/// Synthetic experiments: maximin-LHS conditions over [`DESIGN_BOX`],
/// responses at `theta_true` plus the scaled discrepancy and relative noise.
pub fn generate_experiments(spec: &ToySpec, n_tests: usize, seed: u64) -> Result<Vec<TestCase>> {
    if n_tests < 10 {
        return Err(Error::InvalidInput("at least 10 tests are required".into()));
    }
    if spec.theta_true.len() != PARAM_DIM {
        return Err(Error::DimensionMismatch { expected: PARAM_DIM, found: spec.theta_true.len() });
    }
    let u = maximin_lhs(n_tests, DESIGN_DIM, 50, seed)?;
    let x = scale_from_unit(&u, &DESIGN_BOX);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let model = ToyModel;
    Ok((0..n_tests)
        .map(|i| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let clean = model.simulate(&xi, &spec.theta_true);
            let b = model.bias(&xi);
            let y = (0..QOI_COUNT)
                .map(|j| {
                    let mean = clean[j] + spec.bias_amplitude * b[j];
                    mean + spec.noise_rel * mean.abs() * std_normal.sample(&mut rng)
                })
                .collect();
            TestCase::new(i as i64 + 1, xi, y)
        })
        .collect())
}
