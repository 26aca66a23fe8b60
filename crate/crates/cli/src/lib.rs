//! Batch experiment driver: runs the deterministic-equivalent, Monte-Carlo
//! and optimization pipelines on scenario files and emits CSV with a
//! `#`-prefixed metadata preamble sufficient to reproduce the run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dcsi_rzf::detequiv::{DetEquivEngine, DetEquivOptions};
use dcsi_rzf::experiments::{convergence_study, evaluate_algorithms, Algorithm, EvalOptions};
use dcsi_rzf::optimizer::{
    joint_optimize, naive_alpha, optimize_common_alpha, optimize_per_tx_alpha, optimize_power,
    AlphaMode, OptimizerOptions,
};
use dcsi_rzf::precoding::{monte_carlo, McOptions, PrecoderParams};
use dcsi_rzf::scenario::load_scenario;
use dcsi_rzf::{Error, Result, Scenario};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Correlation levels of the convergence study (fully distributed, the
/// reference D-CSIT level, centralized).
pub const CONVERGENCE_RHOS: [f64; 3] = [0.0, 0.81, 1.0];

/// How the regularization coefficients are chosen for non-optimizing
/// commands.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSelect {
    /// alpha = 1/(beta P) at every TX.
    InvBetaP,
    /// Per-TX naive regularization.
    Naive,
    /// Common given value.
    Common(f64),
    /// Explicit per-TX values.
    PerTx(Vec<f64>),
}

impl AlphaSelect {
    pub fn parse(text: &str) -> Result<AlphaSelect> {
        match text {
            "inv-beta-p" => Ok(AlphaSelect::InvBetaP),
            "naive" => Ok(AlphaSelect::Naive),
            _ => {
                let vals: std::result::Result<Vec<f64>, _> =
                    text.split(',').map(|t| t.trim().parse::<f64>()).collect();
                let vals = vals.map_err(|e| Error::Parse(format!("bad alpha '{text}': {e}")))?;
                if vals.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                    return Err(Error::Parse(format!("alpha must be positive: '{text}'")));
                }
                match vals.len() {
                    0 => Err(Error::Parse("empty alpha".into())),
                    1 => Ok(AlphaSelect::Common(vals[0])),
                    _ => Ok(AlphaSelect::PerTx(vals)),
                }
            }
        }
    }

    pub fn resolve(&self, s: &Scenario, opts: &OptimizerOptions) -> Result<Vec<f64>> {
        match self {
            AlphaSelect::InvBetaP => Ok(vec![1.0 / (s.beta() * s.power_total()); s.n_tx()]),
            AlphaSelect::Naive => (0..s.n_tx()).map(|j| naive_alpha(s, j, opts)).collect(),
            AlphaSelect::Common(a) => Ok(vec![*a; s.n_tx()]),
            AlphaSelect::PerTx(v) => {
                if v.len() != s.n_tx() {
                    return Err(Error::Dimension(format!(
                        "{} alphas for {} TXs",
                        v.len(),
                        s.n_tx()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Everything a run needs beyond the scenario itself.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub seed: Option<u64>,
    pub force_general_path: bool,
    pub renormalize_per_draw: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load_scenario(&self) -> Result<Scenario> {
        load_scenario(&self.scenario_path)
    }

    fn detequiv_options(&self) -> DetEquivOptions {
        DetEquivOptions {
            force_general_path: self.force_general_path,
            ..Default::default()
        }
    }

    fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            detequiv: self.detequiv_options(),
            ..Default::default()
        }
    }

    fn mc_options(&self) -> McOptions {
        McOptions {
            renormalize_per_draw: self.renormalize_per_draw,
            seed: self.seed,
        }
    }

    /// Emit to `--out` or stdout.
    pub fn deliver(&self, csv: &str) -> Result<()> {
        match &self.out {
            Some(path) => {
                std::fs::write(path, csv)?;
                Ok(())
            }
            None => {
                print!("{csv}");
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// CSV assembly
// ---------------------------------------------------------------------------

pub struct CsvDoc {
    meta: Vec<(String, String)>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvDoc {
    pub fn new(command: &str, s: &Scenario, cfg: &RunConfig) -> CsvDoc {
        let mut doc = CsvDoc {
            meta: Vec::new(),
            header: Vec::new(),
            rows: Vec::new(),
        };
        doc.meta("tool", format!("dcsi-rzf v{VERSION}"));
        doc.meta("command", command.to_string());
        doc.meta("scenario", cfg.scenario_path.display().to_string());
        doc.meta("scenario_hash", s.hash());
        doc.meta("seed", cfg.seed.unwrap_or(s.rng_seed()).to_string());
        doc.meta(
            "flags",
            format!(
                "force_general_path={} renormalize_per_draw={}",
                cfg.force_general_path, cfg.renormalize_per_draw
            ),
        );
        doc
    }

    pub fn meta(&mut self, key: &str, value: String) {
        self.meta.push((key.to_string(), value));
    }

    pub fn header(&mut self, cols: &[&str]) {
        self.header = cols.iter().map(|c| c.to_string()).collect();
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn finish(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("csv header");
        for r in &self.rows {
            w.write_record(r).expect("csv row");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8"));
        out
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// Single-scenario commands
// ---------------------------------------------------------------------------

pub fn run_detequiv(cfg: &RunConfig, alpha: &AlphaSelect) -> Result<String> {
    let s = cfg.load_scenario()?;
    let dopts = cfg.detequiv_options();
    let alphas = alpha.resolve(&s, &cfg.optimizer_options())?;
    let engine = DetEquivEngine::new(&s, &alphas, &dopts)?;
    let equal = vec![s.power_total() / s.n_tx() as f64; s.n_tx()];
    let mu = engine.mu_for_budgets(&equal)?;
    let report = engine.report(&mu, &dopts)?;

    let mut doc = CsvDoc::new("detequiv", &s, cfg);
    doc.meta("alpha", fmt_vec(&alphas));
    doc.meta("mu", fmt_vec(&mu));
    doc.meta("sum_rate_det", fmt_f64(report.sum_rate_o));
    for w in &report.warnings {
        doc.meta("warning", w.clone());
    }
    doc.header(&["k", "sinr_det", "interference_det"]);
    for k in 0..s.k_users() {
        doc.row(vec![
            k.to_string(),
            fmt_f64(report.sinr_o[k]),
            fmt_f64(report.i_o[k]),
        ]);
    }
    Ok(doc.finish())
}

pub fn run_montecarlo(cfg: &RunConfig, alpha: &AlphaSelect, trials: usize) -> Result<String> {
    if trials == 0 {
        return Err(Error::Invariant("trials must be >= 1".into()));
    }
    let s = cfg.load_scenario()?;
    let dopts = cfg.detequiv_options();
    let alphas = alpha.resolve(&s, &cfg.optimizer_options())?;
    let engine = DetEquivEngine::new(&s, &alphas, &dopts)?;
    let equal = vec![s.power_total() / s.n_tx() as f64; s.n_tx()];
    let mu = engine.mu_for_budgets(&equal)?;
    let report = engine.report(&mu, &dopts)?;
    let params = PrecoderParams::new(alphas.clone(), mu.clone())?;
    let est = monte_carlo(&s, &params, trials, &cfg.mc_options())?;

    let mut doc = CsvDoc::new("montecarlo", &s, cfg);
    doc.meta("alpha", fmt_vec(&alphas));
    doc.meta("mu", fmt_vec(&mu));
    doc.meta("trials", est.trials.to_string());
    doc.meta("resampled_draws", est.resampled_draws.to_string());
    doc.meta("sum_rate_mc", fmt_f64(est.sum_rate));
    doc.meta("std_error", fmt_f64(est.std_error));
    doc.meta("sum_rate_det", fmt_f64(report.sum_rate_o));
    doc.header(&["k", "sinr_mc_mean", "sinr_det"]);
    for k in 0..s.k_users() {
        doc.row(vec![
            k.to_string(),
            fmt_f64(est.per_user_sinr_mean[k]),
            fmt_f64(report.sinr_o[k]),
        ]);
    }
    Ok(doc.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaOptMode {
    Common,
    PerTx,
    Naive,
}

pub fn run_optimize_alpha(cfg: &RunConfig, mode: AlphaOptMode) -> Result<String> {
    let s = cfg.load_scenario()?;
    let oopts = cfg.optimizer_options();
    let equal = vec![s.power_total() / s.n_tx() as f64; s.n_tx()];
    let (alphas, label) = match mode {
        AlphaOptMode::Common => {
            let (a, _) = optimize_common_alpha(&s, &equal, &oopts)?;
            (vec![a; s.n_tx()], "common")
        }
        AlphaOptMode::PerTx => {
            let (a, _) = optimize_per_tx_alpha(&s, &equal, None, &oopts)?;
            (a, "per-tx")
        }
        AlphaOptMode::Naive => {
            let a: Vec<f64> = (0..s.n_tx())
                .map(|j| naive_alpha(&s, j, &oopts))
                .collect::<Result<_>>()?;
            (a, "naive")
        }
    };
    let engine = DetEquivEngine::new(&s, &alphas, &oopts.detequiv)?;
    let mu = engine.mu_for_budgets(&equal)?;
    let rate = engine.report(&mu, &oopts.detequiv)?.sum_rate_o;

    let mut doc = CsvDoc::new("optimize-alpha", &s, cfg);
    doc.meta("mode", label.to_string());
    doc.meta("sum_rate_det", fmt_f64(rate));
    doc.header(&["tx", "alpha", "mu"]);
    for j in 0..s.n_tx() {
        doc.row(vec![j.to_string(), fmt_f64(alphas[j]), fmt_f64(mu[j])]);
    }
    Ok(doc.finish())
}

pub fn run_optimize_power(cfg: &RunConfig, alpha: &AlphaSelect) -> Result<String> {
    let s = cfg.load_scenario()?;
    let oopts = cfg.optimizer_options();
    let alphas = alpha.resolve(&s, &oopts)?;
    let (mu, trace) = optimize_power(&s, &alphas, 1e-10, 200, None, &oopts)?;
    let engine = DetEquivEngine::new(&s, &alphas, &oopts.detequiv)?;
    let rate = engine.report(&mu, &oopts.detequiv)?.sum_rate_o;
    let ratios = engine.constraint_ratios();

    let mut doc = CsvDoc::new("optimize-power", &s, cfg);
    doc.meta("alpha", fmt_vec(&alphas));
    doc.meta("sum_rate_det", fmt_f64(rate));
    doc.meta("converged", trace.converged.to_string());
    doc.meta("outer_iterations", (trace.points.len() - 1).to_string());
    doc.header(&["tx", "mu", "tx_power"]);
    for j in 0..s.n_tx() {
        let budget = mu[j] * mu[j] * s.power_total() * ratios[j];
        doc.row(vec![j.to_string(), fmt_f64(mu[j]), fmt_f64(budget)]);
    }
    Ok(doc.finish())
}

pub fn run_joint(cfg: &RunConfig, mode: AlphaMode) -> Result<String> {
    let s = cfg.load_scenario()?;
    let oopts = cfg.optimizer_options();
    let res = joint_optimize(&s, mode, &oopts)?;

    let mut doc = CsvDoc::new("joint", &s, cfg);
    doc.meta(
        "mode",
        match mode {
            AlphaMode::Common => "common".into(),
            AlphaMode::PerTx => "per-tx".into(),
        },
    );
    doc.meta("sum_rate_det", fmt_f64(res.sum_rate));
    doc.meta("rounds", res.trace.points.len().to_string());
    doc.header(&["tx", "alpha", "mu", "tx_power"]);
    for j in 0..s.n_tx() {
        doc.row(vec![
            j.to_string(),
            fmt_f64(res.alpha[j]),
            fmt_f64(res.mu[j]),
            fmt_f64(res.budgets[j]),
        ]);
    }
    Ok(doc.finish())
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    Rho,
    PowerDb,
    KUsers,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub var: SweepVar,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    /// Monte-Carlo trials per point; 0 emits deterministic rates only.
    pub trials: usize,
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::Invariant("sweep needs at least one step".into()));
        }
        if !(self.from.is_finite() && self.to.is_finite()) || self.from > self.to {
            return Err(Error::Invariant(format!(
                "sweep range [{}, {}] must be finite and non-decreasing",
                self.from, self.to
            )));
        }
        if self.steps == 1 {
            return Ok(vec![self.from]);
        }
        Ok((0..self.steps)
            .map(|i| self.from + (self.to - self.from) * i as f64 / (self.steps - 1) as f64)
            .collect())
    }
}

fn eval_options(cfg: &RunConfig, trials: usize) -> EvalOptions {
    EvalOptions {
        trials,
        mc: cfg.mc_options(),
        optimizer: cfg.optimizer_options(),
    }
}

/// Sum rate of the five algorithms as the cross-TX error correlation
/// sweeps from distributed to centralized.
pub fn run_sweep_rho(cfg: &RunConfig, spec: &SweepSpec) -> Result<String> {
    let s = cfg.load_scenario()?;
    let grid = spec.grid()?;
    for &rho in &grid {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Invariant(format!("rho {rho} outside [0, 1]")));
        }
    }
    let eopts = eval_options(cfg, spec.trials);

    let mut doc = CsvDoc::new("sweep --var rho", &s, cfg);
    doc.meta("trials", spec.trials.to_string());
    doc.header(&["rho", "algorithm", "sum_rate_det", "sum_rate_mc", "std_error"]);
    for &rho in &grid {
        let point = s.with_rho_scalar(rho)?;
        let results = evaluate_algorithms(&point, &Algorithm::ALL, &eopts)?;
        for r in results {
            let (mc_rate, mc_err) = match &r.mc {
                Some(m) => (fmt_f64(m.sum_rate), fmt_f64(m.std_error)),
                None => (String::new(), String::new()),
            };
            doc.row(vec![
                fmt_f64(rho),
                r.algorithm.label().to_string(),
                fmt_f64(r.sum_rate_det),
                mc_rate,
                mc_err,
            ]);
        }
    }
    Ok(doc.finish())
}

/// Sum rate of the five algorithms as the total transmit power sweeps over
/// a dB range.
pub fn run_sweep_power(cfg: &RunConfig, spec: &SweepSpec) -> Result<String> {
    let s = cfg.load_scenario()?;
    let grid = spec.grid()?;
    let eopts = eval_options(cfg, spec.trials);

    let mut doc = CsvDoc::new("sweep --var power_db", &s, cfg);
    doc.meta("trials", spec.trials.to_string());
    doc.header(&["p_db", "algorithm", "sum_rate_det", "sum_rate_mc", "std_error"]);
    for &db in &grid {
        let point = s.with_power_db(db)?;
        let results = evaluate_algorithms(&point, &Algorithm::ALL, &eopts)?;
        for r in results {
            let (mc_rate, mc_err) = match &r.mc {
                Some(m) => (fmt_f64(m.sum_rate), fmt_f64(m.std_error)),
                None => (String::new(), String::new()),
            };
            doc.row(vec![
                fmt_f64(db),
                r.algorithm.label().to_string(),
                fmt_f64(r.sum_rate_det),
                mc_rate,
                mc_err,
            ]);
        }
    }
    Ok(doc.finish())
}

/// Convergence study: deviation between the deterministic equivalent and
/// the Monte-Carlo ergodic sum rate as the user count grows at fixed beta,
/// for rho in {0, 0.81, 1} and alpha = 1/(beta P).
pub fn run_convergence_study(cfg: &RunConfig, spec: &SweepSpec) -> Result<String> {
    let s = cfg.load_scenario()?;
    let trials = if spec.trials == 0 { 1000 } else { spec.trials };
    let grid = spec.grid()?;
    let mut k_list = Vec::with_capacity(grid.len());
    for &g in &grid {
        let k = g.round() as usize;
        if k == 0 || (g - k as f64).abs() > 1e-9 {
            return Err(Error::Invariant(format!(
                "k_users sweep values must be positive integers, got {g}"
            )));
        }
        k_list.push(k);
    }
    let rows = convergence_study(
        &s,
        &k_list,
        &CONVERGENCE_RHOS,
        trials,
        &cfg.mc_options(),
        &cfg.detequiv_options(),
    )?;

    let mut doc = CsvDoc::new("sweep --var k_users", &s, cfg);
    doc.meta("trials", trials.to_string());
    doc.meta("alpha_rule", "1/(beta*P)".to_string());
    doc.header(&[
        "k_users",
        "rho",
        "sum_rate_det",
        "sum_rate_mc",
        "std_error",
        "abs_deviation",
        "rel_deviation",
    ]);
    for r in rows {
        doc.row(vec![
            r.k_users.to_string(),
            fmt_f64(r.rho),
            fmt_f64(r.sum_rate_det),
            fmt_f64(r.sum_rate_mc),
            fmt_f64(r.std_error),
            fmt_f64(r.abs_deviation),
            fmt_f64(r.rel_deviation),
        ]);
    }
    Ok(doc.finish())
}

pub fn run_sweep(cfg: &RunConfig, spec: &SweepSpec) -> Result<String> {
    match spec.var {
        SweepVar::Rho => run_sweep_rho(cfg, spec),
        SweepVar::PowerDb => run_sweep_power(cfg, spec),
        SweepVar::KUsers => run_convergence_study(cfg, spec),
    }
}

/// Write one of the bundled reference scenarios to disk.
pub fn write_preset(path: &Path, asymmetric: bool) -> Result<()> {
    let s = if asymmetric {
        dcsi_rzf::scenario::preset_asymmetric()
    } else {
        dcsi_rzf::scenario::preset_symmetric()
    };
    s.write_to_path(path)
}
