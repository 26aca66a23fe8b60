//! Per-TX RZF precoders, global precoder assembly, and Monte-Carlo
//! estimation of the empirical SINR / ergodic sum rate.
//!
//! TX j precodes from its own estimate only:
//!
//! ```text
//! T^(j) = (Hhat^H Hhat + M alpha_j I)^{-1} Hhat^H * sqrt(P) / sqrt(Psi_j)
//! ```
//!
//! with Psi_j the squared Frobenius norm of the unnormalized matrix, so
//! ||T^(j)||_F^2 = P exactly. The effective global precoder takes row-block
//! j from mu_j T^(j).

use nalgebra::Cholesky;
use num_complex::Complex;

use crate::channel::{sample_channel, trial_rng};
use crate::linalg::{kahan_sum, CMat};
use crate::scenario::Scenario;
use crate::{Error, Result};

/// The decision variables: per-TX regularization alpha^(j) > 0 and power
/// scaling mu_j > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderParams {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
}

impl PrecoderParams {
    pub fn new(alpha: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::Invariant("alpha entries must be positive".into()));
        }
        if mu.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::Invariant("mu entries must be positive".into()));
        }
        if alpha.len() != mu.len() {
            return Err(Error::Dimension(format!(
                "alpha has {} entries, mu has {}",
                alpha.len(),
                mu.len()
            )));
        }
        Ok(PrecoderParams { alpha, mu })
    }

    /// Common regularization at every TX, mu = 1.
    pub fn uniform(n_tx: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![alpha; n_tx], vec![1.0; n_tx])
    }
}

/// Monte-Carlo estimate of the per-user SINR and the ergodic sum rate.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub per_user_sinr_mean: Vec<f64>,
    /// Mean over trials of sum_k log2(1 + SINR_k), bits/s/Hz.
    pub sum_rate: f64,
    /// Sample standard deviation of the per-trial sum rate over sqrt(trials).
    pub std_error: f64,
    pub trials: usize,
    /// Degenerate draws (all-zero estimate) that were rejected and redrawn.
    pub resampled_draws: usize,
}

#[derive(Debug, Clone, Default)]
pub struct McOptions {
    /// Rescale each draw's global precoder to total power exactly P.
    /// Off by default: the analyzed scheme meets the sum power constraint
    /// only asymptotically through the mu scalings.
    pub renormalize_per_draw: bool,
    /// Override the scenario RNG seed.
    pub seed: Option<u64>,
}

/// RZF precoder for one TX from its local estimate, normalized so that
/// ||T||_F^2 = p exactly. `alpha_j > 0` keeps the regularized Gram matrix
/// invertible.
pub fn rzf_precoder(h_hat_j: &CMat, alpha_j: f64, p: f64) -> Result<CMat> {
    if !(alpha_j.is_finite() && alpha_j > 0.0) {
        return Err(Error::Invariant(format!("alpha must be positive, got {alpha_j}")));
    }
    let m = h_hat_j.ncols();
    let mf = m as f64;
    // (Hhat^H Hhat + M a I)^{-1} Hhat^H = C^{-1} Hhat^H / M with
    // C = Hhat^H Hhat / M + a I, solved in Hermitian form
    let mut c = h_hat_j.adjoint() * h_hat_j / Complex::new(mf, 0.0);
    for i in 0..m {
        c[(i, i)] += Complex::new(alpha_j, 0.0);
    }
    let chol = Cholesky::new(c)
        .ok_or_else(|| Error::Numerical("regularized Gram matrix not positive definite".into()))?;
    let t0 = chol.solve(&h_hat_j.adjoint()) / Complex::new(mf, 0.0);
    let psi = t0.norm_squared();
    if psi <= 0.0 {
        return Err(Error::Degenerate(
            "all-zero channel estimate: power normalization is undefined".into(),
        ));
    }
    Ok(t0 * Complex::new((p / psi).sqrt(), 0.0))
}

/// Stack the per-TX precoders into the effective global M x K precoder:
/// row-block j of the output is mu_j times the block-j rows of T^(j).
pub fn assemble_global(t_list: &[CMat], mu: &[f64], m_per_tx: usize) -> Result<CMat> {
    let n = t_list.len();
    if mu.len() != n {
        return Err(Error::Dimension(format!(
            "{n} per-TX precoders but {} mu entries",
            mu.len()
        )));
    }
    let m = n * m_per_tx;
    let k = t_list[0].ncols();
    for (j, t) in t_list.iter().enumerate() {
        if t.nrows() != m || t.ncols() != k {
            return Err(Error::Dimension(format!(
                "precoder {j} is {}x{}, expected {m}x{k}",
                t.nrows(),
                t.ncols()
            )));
        }
    }
    let mut global = CMat::zeros(m, k);
    for (j, t) in t_list.iter().enumerate() {
        let scale = Complex::new(mu[j], 0.0);
        for r in j * m_per_tx..(j + 1) * m_per_tx {
            for c in 0..k {
                global[(r, c)] = t[(r, c)] * scale;
            }
        }
    }
    Ok(global)
}

/// Per-user SINR_k = |h_k^H t_k|^2 / (1 + sum_{l != k} |h_k^H t_l|^2).
pub fn empirical_sinr(h_true: &CMat, t_global: &CMat) -> Vec<f64> {
    let gains = h_true * t_global; // K x K, entry (k, l) = h_k^H t_l
    let k = gains.nrows();
    (0..k)
        .map(|u| {
            let sig = gains[(u, u)].norm_sqr();
            let mut interf = 0.0;
            for l in 0..k {
                if l != u {
                    interf += gains[(u, l)].norm_sqr();
                }
            }
            sig / (1.0 + interf)
        })
        .collect()
}

/// Transmit power of TX j inside a global precoder.
pub fn per_tx_transmit_power(t_global: &CMat, j: usize, m_per_tx: usize) -> f64 {
    let mut p = 0.0;
    for r in j * m_per_tx..(j + 1) * m_per_tx {
        for c in 0..t_global.ncols() {
            p += t_global[(r, c)].norm_sqr();
        }
    }
    p
}

struct TrialOutcome {
    sum_rate: f64,
    sinr: Vec<f64>,
    resampled: usize,
}

fn run_trial(s: &Scenario, params: &PrecoderParams, opts: &McOptions, seed: u64, trial: u64) -> Result<TrialOutcome> {
    let mut rng = trial_rng(seed, trial);
    let p = s.power_total();
    let mut resampled = 0;
    loop {
        let draw = sample_channel(s, &mut rng);
        let precoders: Result<Vec<CMat>> = (0..s.n_tx())
            .map(|j| rzf_precoder(&draw.h_hat[j], params.alpha[j], p))
            .collect();
        match precoders {
            Ok(t_list) => {
                let mut global = assemble_global(&t_list, &params.mu, s.m_per_tx())?;
                if opts.renormalize_per_draw {
                    let total = global.norm_squared();
                    if total > 0.0 {
                        global *= Complex::new((p / total).sqrt(), 0.0);
                    }
                }
                let sinr = empirical_sinr(&draw.h_true, &global);
                let sum_rate = sinr.iter().map(|&x| (1.0 + x).log2()).sum();
                return Ok(TrialOutcome { sum_rate, sinr, resampled });
            }
            Err(Error::Degenerate(_)) if resampled < 64 => {
                // continue the same stream with a fresh draw
                resampled += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Monte-Carlo estimate of the ergodic sum rate under the distributed RZF
/// scheme: every TX precodes from its own estimate, the global precoder is
/// assembled with the given mu scalings.
///
/// Trials use independent per-trial RNG streams and are accumulated with
/// compensated summation in trial order, so the result is reproducible to
/// the last bit for a fixed seed regardless of the thread count.
pub fn monte_carlo(
    s: &Scenario,
    params: &PrecoderParams,
    trials: usize,
    opts: &McOptions,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Invariant("trials must be >= 1".into()));
    }
    if params.alpha.len() != s.n_tx() {
        return Err(Error::Dimension(format!(
            "params cover {} TXs, scenario has {}",
            params.alpha.len(),
            s.n_tx()
        )));
    }
    let seed = opts.seed.unwrap_or(s.rng_seed());

    #[cfg(feature = "parallel")]
    let outcomes: Result<Vec<TrialOutcome>> = {
        use rayon::prelude::*;
        (0..trials as u64)
            .into_par_iter()
            .map(|t| run_trial(s, params, opts, seed, t))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Result<Vec<TrialOutcome>> = (0..trials as u64)
        .map(|t| run_trial(s, params, opts, seed, t))
        .collect();
    let outcomes = outcomes?;

    let k = s.k_users();
    let tf = trials as f64;
    let sum_rate = kahan_sum(outcomes.iter().map(|o| o.sum_rate)) / tf;
    let per_user_sinr_mean = (0..k)
        .map(|u| kahan_sum(outcomes.iter().map(|o| o.sinr[u])) / tf)
        .collect();
    let var = if trials > 1 {
        kahan_sum(outcomes.iter().map(|o| (o.sum_rate - sum_rate).powi(2))) / (tf - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        per_user_sinr_mean,
        sum_rate,
        std_error: (var / tf).sqrt(),
        trials,
        resampled_draws: outcomes.iter().map(|o| o.resampled).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::trial_rng;
    use crate::scenario::Scenario;
    use approx::assert_relative_eq;

    fn scenario(n: usize, m_per_tx: usize, k: usize, sigma: f64, rho: f64) -> Scenario {
        Scenario::builder()
            .dimensions(n, m_per_tx, k)
            .power_linear(16.0)
            .sigma_scalar(sigma)
            .rho_scalar(rho)
            .theta_identity()
            .seed(42)
            .build()
            .unwrap()
    }

    #[test]
    fn precoder_norm_is_exactly_p() {
        let s = scenario(2, 6, 6, 0.3, 0.5);
        let draw = sample_channel(&s, &mut trial_rng(1, 0));
        for j in 0..2 {
            let t = rzf_precoder(&draw.h_hat[j], 0.1, s.power_total()).unwrap();
            assert_relative_eq!(t.norm_squared(), 16.0, epsilon = 1e-10 * 16.0);
        }
    }

    #[test]
    fn single_user_precoder_is_matched_filter_direction() {
        // K=1, M=2, hhat = (1, 0), alpha = 1, P = 1: T = (1, 0)^T
        let mut h = CMat::zeros(1, 2);
        h[(0, 0)] = Complex::new(1.0, 0.0);
        let t = rzf_precoder(&h, 1.0, 1.0).unwrap();
        assert_relative_eq!(t[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(t[(1, 0)].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn large_alpha_converges_to_matched_filter() {
        let s = scenario(1, 8, 4, 0.0, 0.0);
        let draw = sample_channel(&s, &mut trial_rng(2, 0));
        let t = rzf_precoder(&draw.h_hat[0], 1e6, 1.0).unwrap();
        let mf = draw.h_hat[0].adjoint();
        for c in 0..4 {
            let num = (t.column(c).adjoint() * mf.column(c))[(0, 0)].norm();
            let cos = num / (t.column(c).norm() * mf.column(c).norm());
            assert!(cos >= 1.0 - 1e-4, "column {c}: cosine {cos}");
        }
    }

    #[test]
    fn degenerate_estimate_is_an_error() {
        let h = CMat::zeros(3, 4);
        assert!(matches!(rzf_precoder(&h, 0.5, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn assemble_selects_blocks() {
        let m_per_tx = 2;
        let t1 = CMat::from_element(4, 3, Complex::new(1.0, 0.0));
        let t2 = CMat::from_element(4, 3, Complex::new(2.0, 0.0));
        // mu_2 = 0 bypasses positivity on purpose: selector semantics only
        let g = assemble_global(&[t1.clone(), t2], &[1.0, 0.0], m_per_tx).unwrap();
        assert_eq!(g[(0, 0)].re, 1.0);
        assert_eq!(g[(1, 2)].re, 1.0);
        assert_eq!(g[(2, 0)].re, 0.0);
        assert_eq!(g[(3, 2)].re, 0.0);

        // n = 1, mu = 1 is the identity assembly
        let single = assemble_global(&[t1.clone()], &[1.0], 4).unwrap();
        assert_eq!(single, t1);
    }

    #[test]
    fn per_tx_power_identity_of_block_assembly() {
        let s = scenario(3, 4, 6, 0.2, 0.4);
        let draw = sample_channel(&s, &mut trial_rng(3, 0));
        let t_list: Vec<CMat> = (0..3)
            .map(|j| rzf_precoder(&draw.h_hat[j], 0.2, s.power_total()).unwrap())
            .collect();
        let mu = [0.9, 1.1, 1.3];
        let g = assemble_global(&t_list, &mu, 4).unwrap();
        for j in 0..3 {
            let got = per_tx_transmit_power(&g, j, 4);
            let mut own = 0.0;
            for r in 4 * j..4 * (j + 1) {
                for c in 0..6 {
                    own += t_list[j][(r, c)].norm_sqr();
                }
            }
            assert_relative_eq!(got, mu[j] * mu[j] * own, max_relative = 1e-12);
        }
    }

    #[test]
    fn mu_scaling_scales_power_quadratically() {
        let s = scenario(2, 3, 4, 0.1, 0.3);
        let draw = sample_channel(&s, &mut trial_rng(4, 0));
        let t_list: Vec<CMat> = (0..2)
            .map(|j| rzf_precoder(&draw.h_hat[j], 0.2, s.power_total()).unwrap())
            .collect();
        let g1 = assemble_global(&t_list, &[0.8, 1.2], 3).unwrap();
        let g2 = assemble_global(&t_list, &[1.6, 2.4], 3).unwrap();
        for j in 0..2 {
            assert_relative_eq!(
                per_tx_transmit_power(&g2, j, 3),
                4.0 * per_tx_transmit_power(&g1, j, 3),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn empirical_sinr_known_cases() {
        // K = 1: no interference
        let mut h = CMat::zeros(1, 2);
        h[(0, 0)] = Complex::new(2.0, 0.0);
        let mut t = CMat::zeros(2, 1);
        t[(0, 0)] = Complex::new(1.5, 0.0);
        let sinr = empirical_sinr(&h, &t);
        assert_relative_eq!(sinr[0], 9.0, epsilon = 1e-12);

        // orthogonal beam: zero SINR
        let mut t_perp = CMat::zeros(2, 1);
        t_perp[(1, 0)] = Complex::new(1.0, 0.0);
        assert_relative_eq!(empirical_sinr(&h, &t_perp)[0], 0.0);

        // K = 2 orthonormal channel rows, T = H^H scaled: perfect ZF,
        // SINR_k = ||t_k||^2
        let h2 = CMat::identity(2, 2);
        let t2 = h2.adjoint() * Complex::new(std::f64::consts::SQRT_2, 0.0);
        let sinr2 = empirical_sinr(&h2, &t2);
        assert_relative_eq!(sinr2[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(sinr2[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn permutation_equivariance_of_empirical_sinr() {
        let s = scenario(2, 4, 4, 0.2, 0.6);
        let draw = sample_channel(&s, &mut trial_rng(5, 0));
        let t_list: Vec<CMat> = (0..2)
            .map(|j| rzf_precoder(&draw.h_hat[j], 0.3, s.power_total()).unwrap())
            .collect();
        let g = assemble_global(&t_list, &[1.0, 1.0], 4).unwrap();
        let base = empirical_sinr(&draw.h_true, &g);

        let perm = [2usize, 0, 3, 1];
        let permute_rows = |m: &CMat| {
            let mut out = m.clone();
            for (new_r, &old_r) in perm.iter().enumerate() {
                out.set_row(new_r, &m.row(old_r));
            }
            out
        };
        let h_perm = permute_rows(&draw.h_true);
        let t_perm_list: Vec<CMat> = (0..2)
            .map(|j| rzf_precoder(&permute_rows(&draw.h_hat[j]), 0.3, s.power_total()).unwrap())
            .collect();
        let g_perm = assemble_global(&t_perm_list, &[1.0, 1.0], 4).unwrap();
        let permuted = empirical_sinr(&h_perm, &g_perm);
        for (new_r, &old_r) in perm.iter().enumerate() {
            assert_relative_eq!(permuted[new_r], base[old_r], max_relative = 1e-10);
        }
    }

    #[test]
    fn monte_carlo_is_reproducible_and_trial_count_tightens_error() {
        let s = scenario(2, 4, 4, 0.3, 0.5);
        let params = PrecoderParams::uniform(2, 0.25).unwrap();
        let opts = McOptions::default();

        let one = monte_carlo(&s, &params, 1, &opts).unwrap();
        let one_again = monte_carlo(&s, &params, 1, &opts).unwrap();
        assert_eq!(one.sum_rate.to_bits(), one_again.sum_rate.to_bits());

        let coarse = monte_carlo(&s, &params, 100, &opts).unwrap();
        let fine = monte_carlo(&s, &params, 10_000, &opts).unwrap();
        let ratio = coarse.std_error / fine.std_error;
        assert!(
            (7.0..14.0).contains(&ratio),
            "std_error should scale ~ 1/sqrt(trials), got ratio {ratio}"
        );
    }

    #[test]
    fn renormalized_draws_hit_total_power_exactly() {
        let s = scenario(3, 3, 6, 0.4, 0.2);
        let params = PrecoderParams::new(vec![0.2; 3], vec![0.7, 1.0, 1.25]).unwrap();
        let draw = sample_channel(&s, &mut trial_rng(6, 0));
        let t_list: Vec<CMat> = (0..3)
            .map(|j| rzf_precoder(&draw.h_hat[j], params.alpha[j], s.power_total()).unwrap())
            .collect();
        let mut g = assemble_global(&t_list, &params.mu, 3).unwrap();
        g *= Complex::new((s.power_total() / g.norm_squared()).sqrt(), 0.0);
        assert_relative_eq!(g.norm_squared(), s.power_total(), epsilon = 1e-10);
    }
}
