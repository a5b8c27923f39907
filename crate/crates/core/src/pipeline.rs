//! End-to-end calibration run and its individually runnable stages.
//!
//! Every stage reads its inputs from, and records its outputs in, the
//! `manifest.json` of one output directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataio::{
    apply_corrections, build_sigma_exp, filter_tests, load_tests, save_tests, RunConfig, SimulatorKind, TestCase,
    TestTable,
};
use crate::error::{Error, Result};
use crate::inference::{
    adaptive_metropolis, log_posterior, AdaptConfig, ChainSummary, LikelihoodContext, LikelihoodMode,
    PosteriorChain,
};
use crate::modular_bayes::{
    compute_residuals, design_matrix, emulate_code, evaluate_bias, train_gpbias, BiasEvaluation, CodeEmulator,
    CodeEmulatorDocument, CodeOptions, Simulator, TabulatedSimulator, ValidationReport,
};
use crate::posterior::{summarize, write_cdf_csv, write_marginals_csv, write_pairwise_csv, PosteriorSummary};
use crate::toymodel::{generate_experiments, ToyModel};
use crate::tsa::{sequential_tsa, TestPartition, TsaOutcome};

pub const MANIFEST: &str = "manifest.json";

/// Index of everything a run has written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<String>,
    /// Logical name to path relative to the output directory.
    pub files: BTreeMap<String, String>,
    pub status: String,
    pub error: Option<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }

    fn record(&mut self, key: &str, file: &str) {
        self.files.insert(key.to_string(), file.to_string());
    }

    fn finish_stage(&mut self, stage: &str) {
        if !self.stages.iter().any(|s| s == stage) {
            self.stages.push(stage.to_string());
        }
    }

    /// Path of a recorded artifact.
    pub fn path(&self, dir: &Path, key: &str) -> Result<PathBuf> {
        self.files
            .get(key)
            .map(|f| dir.join(f))
            .ok_or_else(|| Error::Data(format!("manifest has no `{key}` entry; run the earlier stage first")))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// One output directory plus the configuration that drives it.
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    /// Opens `dir`, creating it and a fresh manifest when needed.
    pub fn open(cfg: RunConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let manifest = if dir.join(MANIFEST).exists() {
            Manifest::load(&dir)?
        } else {
            Manifest { config_hash: cfg.hash(), seed: cfg.seed, status: "running".into(), ..Default::default() }
        };
        let mut run = Self { cfg, dir, manifest };
        let text = run.cfg.to_toml_string()?;
        std::fs::write(run.dir.join("config.toml"), text)?;
        run.manifest.record("config", "config.toml");
        run.manifest.config_hash = run.cfg.hash();
        run.manifest.save(&run.dir)?;
        Ok(run)
    }

    fn save(&mut self, stage: &str) -> Result<()> {
        self.manifest.finish_stage(stage);
        self.manifest.save(&self.dir)
    }

    fn file(&self, key: &str) -> Result<PathBuf> {
        self.manifest.path(&self.dir, key)
    }

    /// Marks the manifest as failed, keeping everything written so far.
    pub fn fail(&mut self, err: &Error) {
        self.manifest.status = "failed".into();
        self.manifest.error = Some(err.to_string());
        if let Err(e) = self.manifest.save(&self.dir) {
            log::error!("could not save manifest: {e}");
        }
    }

    fn design_vars(&self) -> Option<usize> {
        match (&self.cfg.data.path, self.cfg.data.design_vars) {
            (_, Some(r)) => Some(r),
            (None, None) => Some(crate::toymodel::DESIGN_DIM),
            (Some(_), None) => None,
        }
    }

    pub fn simulator(&self) -> Result<Box<dyn Simulator>> {
        match self.cfg.simulator.kind {
            SimulatorKind::Toy => Ok(Box::new(ToyModel)),
            SimulatorKind::Table => {
                let path = self.cfg.simulator.table.as_ref().ok_or_else(|| Error::Config("missing table path".into()))?;
                let f = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
                Ok(Box::new(TabulatedSimulator::read_csv(BufReader::new(f))?))
            }
        }
    }

    /// Reads the measured tests, or generates the synthetic corpus.
    pub fn synth(&mut self) -> Result<TestTable> {
        let table = match &self.cfg.data.path {
            Some(p) => load_tests(p, self.cfg.data.design_vars)?,
            None => {
                let toy = &self.cfg.toy;
                let tests = generate_experiments(toy, toy.n_tests, toy.seed)?;
                let mut t = TestTable::with_default_names(tests);
                t.x_names = crate::toymodel::DESIGN_NAMES.iter().map(|s| s.to_string()).collect();
                t.y_names = (1..=crate::toymodel::QOI_COUNT).map(|k| format!("void{k}")).collect();
                t
            }
        };
        save_tests(self.dir.join("tests.csv"), &table)?;
        self.manifest.record("tests", "tests.csv");
        self.save("synth")?;
        Ok(table)
    }

    /// Correction, filtering and the test partition.
    pub fn tsa(&mut self) -> Result<TsaOutcome> {
        let mut table = load_tests(self.file("tests")?, self.design_vars())?;
        let m = table.y_names.len();
        if self.cfg.data.correct {
            apply_corrections(&mut table.tests, &(0..m).collect::<Vec<_>>());
        }
        if self.cfg.data.filter {
            let order = self.cfg.data.elevation_order.clone().unwrap_or_else(|| (0..m).collect());
            if order.iter().any(|&q| q >= m) {
                return Err(Error::Config(format!("elevation_order refers to outputs beyond {m}")));
            }
            let sim = self.simulator()?;
            let res = compute_residuals(&table.tests, sim.as_ref(), &self.cfg.prior.nominal)?;
            table.tests = filter_tests(&table.tests, &order, Some(&res), &self.cfg.data.filter_rules())?;
        }
        let mut excl = csv::Writer::from_writer(create(&self.dir.join("exclusions.csv"))?);
        excl.write_record(["test_id", "reason"])?;
        for t in table.tests.iter().filter(|t| t.is_excluded()) {
            excl.write_record([t.test_id.to_string(), t.exclusion.clone().unwrap_or_default()])?;
        }
        excl.flush()?;
        let kept = TestTable { tests: table.retained(), ..table.clone() };
        save_tests(self.dir.join("tests_retained.csv"), &kept)?;

        let outcome = sequential_tsa(&kept.tests, &self.cfg.tsa)?;
        outcome.partition.write_csv(create(&self.dir.join("partition.csv"))?)?;
        outcome.trace.write_csv(create(&self.dir.join("coverage.csv"))?)?;
        write_json(&self.dir.join("tsa.json"), &outcome)?;
        for (k, f) in [
            ("exclusions", "exclusions.csv"),
            ("tests_retained", "tests_retained.csv"),
            ("partition", "partition.csv"),
            ("coverage", "coverage.csv"),
            ("tsa", "tsa.json"),
        ] {
            self.manifest.record(k, f);
        }
        self.save("tsa")?;
        Ok(outcome)
    }

    fn split(&self) -> Result<(Vec<TestCase>, Vec<TestCase>)> {
        let table = load_tests(self.file("tests_retained")?, self.design_vars())?;
        let outcome: TsaOutcome = read_json(&self.file("tsa")?)?;
        let pick = |ids: &[i64]| -> Result<Vec<TestCase>> {
            ids.iter()
                .map(|id| {
                    table
                        .tests
                        .iter()
                        .find(|t| t.test_id == *id)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("partition names unknown test {id}")))
                })
                .collect()
        };
        Ok((pick(&outcome.partition.iuq_ids)?, pick(&outcome.partition.val_ids)?))
    }

    /// Discrepancy emulator on validation tests and the gated simulator emulator.
    pub fn emulate(&mut self) -> Result<ValidationReport> {
        let (iuq, val) = self.split()?;
        let sim = self.simulator()?;
        let theta0 = self.cfg.prior.nominal.clone();
        let res = compute_residuals(&val, sim.as_ref(), &theta0)?;
        let bias = train_gpbias(&design_matrix(&val), &res, &self.cfg.gp, self.cfg.seed)?;
        let eval = evaluate_bias(&bias, &design_matrix(&iuq))?;
        write_json(&self.dir.join("gpbias.json"), &bias.to_document())?;
        write_json(&self.dir.join("bias_eval.json"), &eval)?;
        self.manifest.record("gpbias", "gpbias.json");
        self.manifest.record("bias_eval", "bias_eval.json");

        let g = &self.cfg.gpcode;
        let opts = CodeOptions {
            n_design: g.n_design,
            holdout_fraction: g.holdout_fraction,
            q2_threshold: g.q2_threshold,
            gp: g.gp_config(),
        };
        let build = emulate_code(&iuq, sim.as_ref(), &self.cfg.prior, &opts, self.cfg.seed.wrapping_add(1))?;
        let ids: Vec<i64> = iuq.iter().map(|t| t.test_id).collect();
        crate::modular_bayes::write_design_csv(
            create(&self.dir.join("code_design.csv"))?,
            &build.design,
            &ids,
            &build.outputs,
        )?;
        write_json(&self.dir.join("gpcode.json"), &build.emulator.to_document())?;
        write_json(&self.dir.join("validation.json"), &build.report)?;
        for (k, f) in [("code_design", "code_design.csv"), ("gpcode", "gpcode.json"), ("validation", "validation.json")] {
            self.manifest.record(k, f);
        }
        self.save("emulate")?;
        if !build.report.passed {
            return Err(Error::GateFailed(format!(
                "emulator predictivity below {} for output(s) {:?}",
                build.report.q2_threshold,
                build.report.failing()
            )));
        }
        Ok(build.report)
    }

    /// Samples the posterior in `mode` from the stored emulators.
    pub fn mcmc(&mut self, mode: LikelihoodMode) -> Result<ChainSummary> {
        let (iuq, _) = self.split()?;
        let doc: CodeEmulatorDocument = read_json(&self.file("gpcode")?)?;
        let emu = CodeEmulator::from_document(&doc)?;
        let x_iuq = design_matrix(&iuq);
        let m = emu.qoi_count();
        let eval = match mode {
            LikelihoodMode::WithBias => read_json::<BiasEvaluation>(&self.file("bias_eval")?)?,
            LikelihoodMode::NoBias => BiasEvaluation::zeros(iuq.len(), m),
        };
        let y_obs: Vec<f64> = iuq.iter().flat_map(|t| t.y.iter().copied()).collect();
        let sigma_exp = build_sigma_exp(&y_obs, m, &self.cfg.likelihood.measurement_error())?;
        let sites = emu.at_sites(&x_iuq)?;
        let mut ctx = LikelihoodContext::new(y_obs, eval.delta_stacked(), sigma_exp, eval.sigma_bias.clone(), &sites)?;
        let prior = self.cfg.prior.clone();
        if self.cfg.likelihood.freeze_code_variance {
            ctx.freeze_code_variance(&prior.nominal)?;
        }
        let mc = &self.cfg.mcmc;
        let adapt = AdaptConfig::for_prior(&prior, mc.init_scale, mc.warmup);
        let seed = self.cfg.mcmc_seed();
        let mut chain = adaptive_metropolis(
            |t| log_posterior(t, &ctx, &prior, mode),
            &prior.nominal,
            mc.n_samples,
            seed,
            &adapt,
        )
        .map_err(|e| match e {
            Error::InvalidInput(m) => Error::Numerical(m),
            other => other,
        })?;
        chain.burn_in = mc.burn_in;
        chain.thin = mc.thin;
        let summary = chain.summary(mc.warmup)?;
        let (csv_name, json_name) = (format!("chain_{mode}.csv"), format!("chain_{mode}.json"));
        chain.write_csv(create(&self.dir.join(&csv_name))?)?;
        write_json(&self.dir.join(&json_name), &summary)?;
        self.manifest.record(&format!("chain_{mode}"), &csv_name);
        self.manifest.record(&format!("chain_summary_{mode}"), &json_name);
        self.save(&format!("mcmc_{mode}"))?;
        Ok(summary)
    }

    /// Moments, modes, fits and plot data for the chain sampled in `mode`.
    pub fn analyze(&mut self, mode: LikelihoodMode) -> Result<PosteriorSummary> {
        let info: ChainSummary = read_json(&self.file(&format!("chain_summary_{mode}"))?)?;
        let f = File::open(self.file(&format!("chain_{mode}"))?)?;
        let chain = PosteriorChain::read_csv(BufReader::new(f), info.seed, info.burn_in, info.thin)?;
        let kept = chain.retained()?;
        let names = self.cfg.prior.names.clone();
        let summary = summarize(&kept, &names)?;
        let files = [
            ("posterior", format!("posterior_{mode}.json")),
            ("marginals", format!("marginals_{mode}.csv")),
            ("pairwise", format!("pairwise_{mode}.csv")),
            ("cdf", format!("cdf_{mode}.csv")),
        ];
        write_json(&self.dir.join(&files[0].1), &summary)?;
        write_marginals_csv(create(&self.dir.join(&files[1].1))?, &kept, &names, 200)?;
        write_pairwise_csv(create(&self.dir.join(&files[2].1))?, &kept, &names, 40)?;
        write_cdf_csv(create(&self.dir.join(&files[3].1))?, &kept, &summary)?;
        for (k, f) in &files {
            self.manifest.record(&format!("{k}_{mode}"), f);
        }
        self.save(&format!("analyze_{mode}"))?;
        Ok(summary)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub n_tests: usize,
    pub n_iuq: usize,
    pub n_val: usize,
    pub n_iuq_init: usize,
    pub full_coverage_len: usize,
}

impl PartitionSummary {
    fn new(o: &TsaOutcome) -> Self {
        let p: &TestPartition = &o.partition;
        Self {
            n_tests: p.iuq_ids.len() + p.val_ids.len(),
            n_iuq: p.iuq_ids.len(),
            n_val: p.val_ids.len(),
            n_iuq_init: o.iuq_init.ids.len(),
            full_coverage_len: o.trace.full_coverage_len(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: LikelihoodMode,
    pub partition: PartitionSummary,
    pub validation: ValidationReport,
    pub extrapolated_iuq_tests: usize,
    pub chain: ChainSummary,
    pub posterior: PosteriorSummary,
    pub files: BTreeMap<String, String>,
}

/// Runs every stage in order; on failure the manifest records the error.
pub fn run_pipeline(cfg: RunConfig, dir: impl Into<PathBuf>) -> Result<PipelineReport> {
    let mut run = Run::open(cfg, dir)?;
    let mode = run.cfg.likelihood.mode;
    let result = (|| {
        run.synth()?;
        let outcome = run.tsa()?;
        let validation = run.emulate()?;
        let eval: BiasEvaluation = read_json(&run.file("bias_eval")?)?;
        let chain = run.mcmc(mode)?;
        let posterior = run.analyze(mode)?;
        Ok((outcome, validation, eval, chain, posterior))
    })();
    match result {
        Ok((outcome, validation, eval, chain, posterior)) => {
            run.manifest.status = "ok".into();
            run.manifest.error = None;
            run.manifest.record("report", "report.json");
            let report = PipelineReport {
                mode,
                partition: PartitionSummary::new(&outcome),
                validation,
                extrapolated_iuq_tests: eval.extrapolated.len(),
                chain,
                posterior,
                files: run.manifest.files.clone(),
            };
            write_json(&run.dir.join("report.json"), &report)?;
            run.manifest.save(&run.dir)?;
            Ok(report)
        }
        Err(e) => {
            run.fail(&e);
            Err(e)
        }
    }
}

/// Samples retained from a stored chain.
pub fn load_retained(dir: &Path, mode: LikelihoodMode) -> Result<DMatrix<f64>> {
    let manifest = Manifest::load(dir)?;
    let info: ChainSummary = read_json(&manifest.path(dir, &format!("chain_summary_{mode}"))?)?;
    let f = File::open(manifest.path(dir, &format!("chain_{mode}"))?)?;
    PosteriorChain::read_csv(BufReader::new(f), info.seed, info.burn_in, info.thin)?.retained()
}

/// `runs/run-<unix seconds>-<first 12 hex digits of the config hash>`.
pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("run-{secs}-{}", &cfg.hash()[..12]))
}
