mod common;

use std::time::{Duration, Instant};

use common::*;
use modbayes::dataio::{correct_void_fraction, RunConfig};
use modbayes::doe::{centered_l2_discrepancy, wraparound_l2_discrepancy, DiscrepancyMeasure};
use modbayes::gp::{self, GpConfig};
use modbayes::inference::{
    adaptive_metropolis, effective_sample_size, log_likelihood, postprocess_chain, AdaptConfig, LikelihoodContext,
    LikelihoodMode,
};
use modbayes::modular_bayes::{design_matrix, emulate_code, CodeOptions, PriorSpec};
use modbayes::pipeline::{run_pipeline, Run};
use modbayes::posterior::{fit_distribution, ks_test, Distribution, Family, PosteriorSummary};
use modbayes::toymodel::{generate_experiments, ToyModel, ToySpec};
use modbayes::tsa::{sequential_tsa, TsaConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_discrepancy() -> Outcome {
    let m = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
    let got = [
        centered_l2_discrepancy(&m(&[0.5])).map_err(|e| e.to_string())?,
        centered_l2_discrepancy(&m(&[0.25, 0.75])).map_err(|e| e.to_string())?,
        wraparound_l2_discrepancy(&m(&[0.3])).map_err(|e| e.to_string())?,
        wraparound_l2_discrepancy(&m(&[0.0, 0.5])).map_err(|e| e.to_string())?,
    ];
    let want = [1.0 / 12.0, 1.0 / 48.0, 17.0 / 6.0, 65.0 / 24.0];
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(err <= 1e-10, format!("values {got:?}, max error {err:.1e}"))
}

fn c2_tsa_oracle() -> Outcome {
    let (ids, x) = twelve_tests();
    let mut picks = 0;
    for (measure, disc) in [(DiscrepancyMeasure::WraparoundL2, wd2 as Disc), (DiscrepancyMeasure::CenteredL2, cd2)] {
        let cfg = TsaConfig { alpha: 0.5, beta: 0.25, measure, ..TsaConfig::default() };
        let out = sequential_tsa(&tests_from(&ids, &x), &cfg).map_err(|e| e.to_string())?;
        picks += replay_tsa(&ids, &x, &out, disc)?;
        let eta = &out.trace.eta;
        if eta.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("{measure:?}: coverage trace not monotone"));
        }
        let last = *eta.last().ok_or("empty coverage trace")?;
        if (last - 1.0).abs() > 1e-9 {
            return Err(format!("{measure:?}: terminal coverage {last}"));
        }
    }
    Ok(format!("{picks} greedy picks equal the exhaustive optimum"))
}

fn toy_corpus() -> Vec<modbayes::dataio::TestCase> {
    let spec = ToySpec::default();
    generate_experiments(&spec, spec.n_tests, spec.seed).expect("toy corpus")
}

fn c3_partition_counts() -> Outcome {
    let tests = toy_corpus();
    let out = sequential_tsa(&tests, &TsaConfig::default()).map_err(|e| e.to_string())?;
    let p = &out.partition;
    let mut all: Vec<i64> = p.iuq_ids.iter().chain(&p.val_ids).copied().collect();
    all.sort_unstable();
    let mut ids: Vec<i64> = tests.iter().map(|t| t.test_id).collect();
    ids.sort_unstable();
    let disjoint = p.iuq_ids.iter().all(|i| !p.val_ids.contains(i));
    check(
        tests.len() == 78 && p.iuq_ids.len() == 19 && out.iuq_init.ids.len() == 3 && all == ids && disjoint,
        format!(
            "N = {}, N_IUQ = {}, N_IUQ,init = {}, disjoint {disjoint}, exhaustive {}",
            tests.len(),
            p.iuq_ids.len(),
            out.iuq_init.ids.len(),
            all == ids
        ),
    )
}

fn c4_gp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = DMatrix::from_fn(12, 2, |_, _| rng.random::<f64>());
    let y: Vec<f64> = (0..12).map(|i| (5.0 * x[(i, 0)]).cos() * (4.0 * x[(i, 1)]).sin()).collect();
    let m = gp::fit(&x, &y, &GpConfig { nugget: 0.0, ..Default::default() }, 2).map_err(|e| e.to_string())?;
    let (mu, _) = m.predict(&x).map_err(|e| e.to_string())?;
    let interp = mu.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let x = DMatrix::from_fn(10, 2, |_, _| rng.random::<f64>());
    let y: Vec<f64> = (0..10).map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 0)]).collect();
    let m = gp::fit(&x, &y, &GpConfig { nugget: 1e-8, ..Default::default() }, 1).map_err(|e| e.to_string())?;
    let fast = m.loo_residuals().map_err(|e| e.to_string())?;
    let slow = loo_by_refit(&m, &x, &y);
    let rel = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs() / b.abs().max(1e-3)).fold(0.0, f64::max);
    check(
        interp <= 1e-6 && rel <= 1e-6,
        format!("interpolation error {interp:.1e}, LOO relative error {rel:.1e}"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c5_gpcode_trend() -> Outcome {
    let tests = toy_corpus();
    let part = sequential_tsa(&tests, &TsaConfig::default()).map_err(|e| e.to_string())?.partition;
    let iuq: Vec<_> = part
        .iuq_ids
        .iter()
        .map(|id| tests.iter().find(|t| t.test_id == *id).unwrap().clone())
        .collect();
    let prior = PriorSpec::default();
    let mut medians = Vec::new();
    let mut predict_ms = 0.0;
    for n_design in [3, 20] {
        let opts = CodeOptions { n_design, ..CodeOptions::default() };
        let mut q2 = vec![Vec::new(); 4];
        for seed in 0..10 {
            let build = emulate_code(&iuq, &ToyModel, &prior, &opts, seed).map_err(|e| e.to_string())?;
            for q in &build.report.qois {
                q2[q.qoi].push(q.q2);
            }
            if n_design == 20 && seed == 0 {
                let x = design_matrix(&iuq);
                let xr: Vec<f64> = x.row(0).iter().copied().collect();
                let start = Instant::now();
                for k in 0..100 {
                    let theta = vec![0.5 + 0.01 * k as f64; 5];
                    build.emulator.predict(&xr, &theta).map_err(|e| e.to_string())?;
                }
                predict_ms = start.elapsed().as_secs_f64() * 10.0;
            }
        }
        medians.push(q2.into_iter().map(median).collect::<Vec<_>>());
    }
    let low = medians[0].iter().all(|&q| q < 0.7);
    let high = medians[1].iter().all(|&q| q >= 0.95);
    let fmt = |v: &[f64]| v.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>().join(", ");
    check(
        low && high && predict_ms <= 10.0,
        format!(
            "median Q2 [{}] at 3, [{}] at 20, prediction {predict_ms:.3} ms",
            fmt(&medians[0]),
            fmt(&medians[1])
        ),
    )
}

fn chain_stats(target: impl FnMut(&[f64]) -> f64, dim: usize, seed: u64) -> Result<(DMatrix<f64>, usize), String> {
    let cfg = AdaptConfig::for_ranges(&vec![10.0; dim], 0.1, 1000);
    let chain = adaptive_metropolis(target, &vec![0.0; dim], 50_000, seed, &cfg).map_err(|e| e.to_string())?;
    let kept = postprocess_chain(&chain, 10_000, 10).map_err(|e| e.to_string())?;
    let post = chain.samples.rows(10_000, 40_000).into_owned();
    Ok((post, kept.nrows()))
}

fn col_stats(s: &DMatrix<f64>, k: usize) -> (f64, f64, f64) {
    let v: Vec<f64> = s.column(k).iter().copied().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / effective_sample_size(&v)).sqrt();
    (mean, var, se)
}

fn c6_mcmc() -> Outcome {
    let (mu, sd) = (2.0, 0.5);
    let (s1, kept1) = chain_stats(|t| -0.5 * ((t[0] - mu) / sd).powi(2), 1, 11)?;
    let (m1, v1, se1) = col_stats(&s1, 0);
    let ok1 = (m1 - mu).abs() <= 3.0 * se1 && (v1 / (sd * sd) - 1.0).abs() <= 0.1;

    let (m, s, rho) = ([1.0, -1.0], [1.0, 2.0], 0.8);
    let target = |t: &[f64]| {
        let (a, b) = ((t[0] - m[0]) / s[0], (t[1] - m[1]) / s[1]);
        -0.5 * (a * a - 2.0 * rho * a * b + b * b) / (1.0 - rho * rho)
    };
    let (s2, kept2) = chain_stats(target, 2, 12)?;
    let (ma, va, sea) = col_stats(&s2, 0);
    let (mb, vb, seb) = col_stats(&s2, 1);
    let cov = s2.column(0).iter().zip(s2.column(1).iter()).map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>()
        / (s2.nrows() as f64 - 1.0);
    let r = cov / (va * vb).sqrt();
    let ok2 = (ma - m[0]).abs() <= 3.0 * sea
        && (mb - m[1]).abs() <= 3.0 * seb
        && (va / (s[0] * s[0]) - 1.0).abs() <= 0.1
        && (vb / (s[1] * s[1]) - 1.0).abs() <= 0.1
        && (r - rho).abs() <= 0.05;
    check(
        ok1 && ok2 && kept1 == 4000 && kept2 == 4000,
        format!(
            "1D mean {m1:.4} (se {se1:.4}) var {v1:.4}; 2D means {ma:.3}, {mb:.3} vars {va:.3}, {vb:.3} corr {r:.3}; kept {kept1}"
        ),
    )
}

fn c7_likelihood_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 24;
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..90.0)).collect();
    let sigma_exp: Vec<f64> = y.iter().map(|v| (0.02 * v).powi(2)).collect();
    let code = |t: &[f64]| -> modbayes::Result<(Vec<f64>, Vec<f64>)> {
        let mean = (0..n).map(|i| 50.0 + 10.0 * t[i % 5] - 3.0 * (i as f64 * t[0]).sin()).collect();
        let var = (0..n).map(|i| 0.1 + 0.05 * t[(i + 1) % 5]).collect();
        Ok((mean, var))
    };
    let ctx = LikelihoodContext::new(y, vec![0.0; n], sigma_exp, vec![0.0; n], &code).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let theta: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..5.0)).collect();
        let a = log_likelihood(&theta, &ctx, LikelihoodMode::WithBias).map_err(|e| e.to_string())?;
        let b = log_likelihood(&theta, &ctx, LikelihoodMode::NoBias).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }
    check(worst <= 1e-12, format!("max difference {worst:.1e} over 100 points"))
}

fn z_scores(s: &PosteriorSummary, truth: &[f64]) -> Vec<f64> {
    s.means().iter().zip(s.stds()).zip(truth).map(|((m, sd), t)| (m - t) / sd).collect()
}

fn fmt_z(z: &[f64]) -> String {
    z.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
}

fn c8_identifiability() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.likelihood.mode = LikelihoodMode::NoBias;
    let truth = cfg.toy.theta_true.clone();
    let report = run_pipeline(cfg, tmp.path()).map_err(|e| e.to_string())?;
    let z = z_scores(&report.posterior, &truth);
    check(z.iter().all(|v| v.abs() <= 2.0), format!("z-scores [{}]", fmt_z(&z)))
}

pub const BIAS_AMPLITUDE: f64 = 1.0;

fn c9_overfitting() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.toy.bias_amplitude = BIAS_AMPLITUDE;
    let truth = cfg.toy.theta_true.clone();
    let mut run = Run::open(cfg, tmp.path()).map_err(|e| e.to_string())?;
    let mut go = || -> modbayes::Result<(PosteriorSummary, PosteriorSummary)> {
        run.synth()?;
        run.tsa()?;
        run.emulate()?;
        run.mcmc(LikelihoodMode::NoBias)?;
        let nb = run.analyze(LikelihoodMode::NoBias)?;
        run.mcmc(LikelihoodMode::WithBias)?;
        let wb = run.analyze(LikelihoodMode::WithBias)?;
        Ok((nb, wb))
    };
    let (nb, wb) = go().map_err(|e| e.to_string())?;
    let narrower = nb.stds().iter().zip(wb.stds()).filter(|(a, b)| *a < b).count();
    let (znb, zwb) = (z_scores(&nb, &truth), z_scores(&wb, &truth));
    let covered = |z: &[f64]| z.iter().filter(|v| v.abs() <= 2.0).count();
    check(
        2 * narrower > truth.len() && covered(&zwb) >= covered(&znb),
        format!(
            "NoBias narrower for {narrower}/5, covered NoBias {} WithBias {}; z NoBias [{}] WithBias [{}]",
            covered(&znb),
            covered(&zwb),
            fmt_z(&znb),
            fmt_z(&zwb)
        ),
    )
}

fn c10_distribution_fits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draw = |d: &Distribution, n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| d.sample(rng)).collect::<Vec<f64>>();
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();

    let gauss = Distribution::Gaussian { mu: 1.4110, sigma: 0.1833 };
    let gamma = Distribution::Gamma { alpha: 12.6511, beta: 0.0975 };
    let rice = Distribution::Rician { s: 0.5709, sigma: 0.2218 };
    let mut notes = Vec::new();
    let mut ok = true;
    for (d, fam) in [(gauss, Family::Gaussian), (gamma, Family::Gamma), (rice, Family::Rician)] {
        let fit = fit_distribution(&draw(&d, 100_000, &mut rng), fam).map_err(|e| e.to_string())?.dist;
        let good = match (d, fit) {
            (Distribution::Gaussian { mu, sigma }, Distribution::Gaussian { mu: m, sigma: s }) => {
                notes.push(format!("N({m:.4}, {s:.4})"));
                rel(m, mu) <= 0.01 && rel(s, sigma) <= 0.01
            }
            (Distribution::Gamma { .. }, Distribution::Gamma { alpha, beta }) => {
                notes.push(format!("Gamma mean {:.4}", alpha * beta));
                rel(alpha * beta, 1.2335) <= 0.01 && (alpha * beta - 1.2340).abs() <= 0.01
            }
            (Distribution::Rician { s, sigma }, Distribution::Rician { s: a, sigma: b }) => {
                notes.push(format!("Rice({a:.4}, {b:.4})"));
                rel(a, s) <= 0.05 && rel(b, sigma) <= 0.05
            }
            _ => false,
        };
        ok &= good;
    }
    let mut accepted = 0;
    let trials = 1000;
    for k in 0..trials {
        let (d, fam) = [(gauss, Family::Gaussian), (gamma, Family::Gamma), (rice, Family::Rician)][k % 3];
        let s = draw(&d, 500, &mut rng);
        let fit = fit_distribution(&s, fam).map_err(|e| e.to_string())?;
        accepted += ks_test(&s, &fit.dist).map_err(|e| e.to_string())?.1 as usize;
    }
    let freq = accepted as f64 / trials as f64;
    let gross = ks_test(&draw(&Distribution::Gaussian { mu: 0.0, sigma: 1.0 }, 500, &mut rng), &Distribution::Gaussian { mu: 5.0, sigma: 1.0 })
        .map_err(|e| e.to_string())?
        .1;
    check(
        ok && freq >= 0.93 && !gross,
        format!("{}; KS acceptance {:.1}%", notes.join(", "), 100.0 * freq),
    )
}

fn c11_correction() -> Outcome {
    let (a, ia) = correct_void_fraction(50.0);
    let (b, ib) = correct_void_fraction(20.0);
    let (c, ic) = correct_void_fraction(95.0);
    let (d, id) = correct_void_fraction(5.0);
    check(
        (a - 44.7628).abs() <= 1e-4 && (b - 17.4368).abs() <= 1e-4 && ia && ib && c == 95.0 && !ic && d == 5.0 && !id,
        format!("50 -> {a:.4}, 20 -> {b:.4}, 95 -> {c}, 5 -> {d}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 11] = [
        ("discrepancy formulas", c1_discrepancy, 1),
        ("allocation matches exhaustive search", c2_tsa_oracle, 30),
        ("partition counts for 78 tests", c3_partition_counts, 60),
        ("GP interpolation and leave-one-out", c4_gp, 60),
        ("simulator emulator validation trend", c5_gpcode_trend, 900),
        ("sampler on analytic Gaussians", c6_mcmc, 120),
        ("likelihood reduction without bias", c7_likelihood_reduction, 10),
        ("bias-free parameter recovery", c8_identifiability, 600),
        ("over-fitting without the bias term", c9_overfitting, 1200),
        ("distribution fitting and KS", c10_distribution_fits, 300),
        ("void fraction correction", c11_correction, 1),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f, limit)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*limit);
        let (ok, detail) = match res {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        failed += !ok as usize;
        println!(
            "criterion {n:>2} {}: {name}: {detail} ({:.1} s, limit {limit} s)",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
