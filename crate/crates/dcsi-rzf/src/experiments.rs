//! Reusable experiment building blocks: the five-algorithm comparison suite
//! and the deterministic-vs-Monte-Carlo convergence study.

use crate::detequiv::{DetEquivEngine, DetEquivOptions};
use crate::optimizer::{
    joint_optimize, naive_alpha, optimize_common_alpha, optimize_per_tx_alpha, AlphaMode,
    OptimizerOptions,
};
use crate::precoding::{monte_carlo, McOptions, PrecoderParams};
use crate::scenario::Scenario;
use crate::Result;

/// The transmission strategies compared throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Per-TX naive regularization, equal power split.
    NaiveEq,
    /// Common robust regularization, equal power split.
    CommonEq,
    /// Per-TX robust regularization, equal power split.
    PerTxEq,
    /// Joint common regularization and power optimization.
    CommonJoint,
    /// Joint per-TX regularization and power optimization.
    PerTxJoint,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::NaiveEq,
        Algorithm::CommonEq,
        Algorithm::PerTxEq,
        Algorithm::CommonJoint,
        Algorithm::PerTxJoint,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::NaiveEq => "alpha_naive,mu_eq",
            Algorithm::CommonEq => "alpha_same,mu_eq",
            Algorithm::PerTxEq => "alpha_star,mu_eq",
            Algorithm::CommonJoint => "alpha_same,mu_star",
            Algorithm::PerTxJoint => "alpha_star,mu_star",
        }
    }
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub sum_rate: f64,
    pub std_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub sum_rate_det: f64,
    pub mc: Option<McSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Monte-Carlo trials per algorithm; 0 skips the simulation entirely.
    pub trials: usize,
    pub mc: McOptions,
    pub optimizer: OptimizerOptions,
}

impl EvalOptions {
    pub fn det_only() -> Self {
        EvalOptions::default()
    }
}

/// Evaluate the requested algorithms on one scenario: optimize the
/// parameters, compute the deterministic sum rate, and optionally estimate
/// the ergodic sum rate by Monte-Carlo.
pub fn evaluate_algorithms(
    s: &Scenario,
    algorithms: &[Algorithm],
    opts: &EvalOptions,
) -> Result<Vec<AlgorithmResult>> {
    let n = s.n_tx();
    let equal: Vec<f64> = vec![s.power_total() / n as f64; n];
    let oopts = &opts.optimizer;
    let dopts = &oopts.detequiv;

    let mut out = Vec::with_capacity(algorithms.len());
    for &alg in algorithms {
        let (alpha, mu) = match alg {
            Algorithm::NaiveEq => {
                let alpha: Vec<f64> = (0..n)
                    .map(|j| naive_alpha(s, j, oopts))
                    .collect::<Result<_>>()?;
                let engine = DetEquivEngine::new(s, &alpha, dopts)?;
                let mu = engine.mu_for_budgets(&equal)?;
                (alpha, mu)
            }
            Algorithm::CommonEq => {
                let (a, _) = optimize_common_alpha(s, &equal, oopts)?;
                let alpha = vec![a; n];
                let engine = DetEquivEngine::new(s, &alpha, dopts)?;
                let mu = engine.mu_for_budgets(&equal)?;
                (alpha, mu)
            }
            Algorithm::PerTxEq => {
                let (alpha, _) = optimize_per_tx_alpha(s, &equal, None, oopts)?;
                let engine = DetEquivEngine::new(s, &alpha, dopts)?;
                let mu = engine.mu_for_budgets(&equal)?;
                (alpha, mu)
            }
            Algorithm::CommonJoint => {
                let res = joint_optimize(s, AlphaMode::Common, oopts)?;
                (res.alpha, res.mu)
            }
            Algorithm::PerTxJoint => {
                let res = joint_optimize(s, AlphaMode::PerTx, oopts)?;
                (res.alpha, res.mu)
            }
        };
        let engine = DetEquivEngine::new(s, &alpha, dopts)?;
        let sum_rate_det = engine.report(&mu, dopts)?.sum_rate_o;
        let mc = if opts.trials > 0 {
            let params = PrecoderParams::new(alpha.clone(), mu.clone())?;
            let est = monte_carlo(s, &params, opts.trials, &opts.mc)?;
            Some(McSummary {
                sum_rate: est.sum_rate,
                std_error: est.std_error,
                trials: est.trials,
            })
        } else {
            None
        };
        out.push(AlgorithmResult {
            algorithm: alg,
            alpha,
            mu,
            sum_rate_det,
            mc,
        });
    }
    Ok(out)
}

/// One point of the convergence study.
#[derive(Debug, Clone)]
pub struct DeviationRow {
    pub k_users: usize,
    pub rho: f64,
    pub sum_rate_det: f64,
    pub sum_rate_mc: f64,
    pub std_error: f64,
    pub abs_deviation: f64,
    pub rel_deviation: f64,
}

/// Deviation between the deterministic equivalent and the Monte-Carlo
/// ergodic sum rate across system sizes, at alpha = 1/(beta P) and equal
/// power split, for each error correlation in `rhos`.
pub fn convergence_study(
    s: &Scenario,
    k_list: &[usize],
    rhos: &[f64],
    trials: usize,
    mc: &McOptions,
    dopts: &DetEquivOptions,
) -> Result<Vec<DeviationRow>> {
    let mut rows = Vec::with_capacity(k_list.len() * rhos.len());
    for &k in k_list {
        let resized = s.with_k_users(k)?;
        for &rho in rhos {
            let point = resized.with_rho_scalar(rho)?;
            let n = point.n_tx();
            let alpha = vec![1.0 / (point.beta() * point.power_total()); n];
            let engine = DetEquivEngine::new(&point, &alpha, dopts)?;
            let equal = vec![point.power_total() / n as f64; n];
            let mu = engine.mu_for_budgets(&equal)?;
            let det = engine.report(&mu, dopts)?.sum_rate_o;
            let params = PrecoderParams::new(alpha, mu)?;
            let est = monte_carlo(&point, &params, trials, mc)?;
            let abs_deviation = (det - est.sum_rate).abs();
            rows.push(DeviationRow {
                k_users: k,
                rho,
                sum_rate_det: det,
                sum_rate_mc: est.sum_rate,
                std_error: est.std_error,
                abs_deviation,
                rel_deviation: abs_deviation / est.sum_rate.abs().max(f64::MIN_POSITIVE),
            });
        }
    }
    Ok(rows)
}
