//! Large-system deterministic equivalents of the per-user SINR under
//! distributed RZF precoding.
//!
//! The pipeline is: per-TX fixed point m_k^(j) and resolvent equivalent
//! Q_o^(j); the pairwise trace functional Gamma_{j,j'}(X) obtained from a
//! K x K linear system; and the SINR assembly
//!
//! ```text
//! SINR_k = P (sum_j mu_j sqrt(c0_jk / G_jj(I)) Phi_jk / (1 + m_jk))^2 / (1 + I_k)
//! ```
//!
//! with the interference I_k a double sum over TX pairs of three Gamma
//! terms. Every quantity depends on the scenario statistics only, not on a
//! channel realization.
//!
//! When every Theta_k is the identity the whole pipeline collapses to
//! closed forms (no K x K solve); that fast path is picked automatically
//! and can be disabled through [`DetEquivOptions::force_general_path`] for
//! testing. The separate [`iso_specializations`] entry point evaluates the
//! centralized / fully-distributed / D-CSI closed-form expressions through
//! an independent code path and exists mainly as a cross-check oracle.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::linalg::{
    block_trace_prod, partial_trace, partial_trace_prod, trace_prod, CMat, C_ZERO,
};
use crate::precoding::PrecoderParams;
use crate::scenario::{csit_coefficients, CsitCoefficients, Scenario};
use crate::{Error, Result};

type C = Complex<f64>;

#[derive(Debug, Clone)]
pub struct DetEquivOptions {
    /// Run the general (K x K solve) path even when the scenario is
    /// isotropic.
    pub force_general_path: bool,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    /// Allowed violation of the power scaling constraint
    /// sum_j mu_j^2 Gamma_jj(E_j E_j^H) / Gamma_jj(I) = 1.
    pub mu_constraint_tol: f64,
}

impl Default for DetEquivOptions {
    fn default() -> Self {
        DetEquivOptions {
            force_general_path: false,
            fp_tol: 1e-12,
            fp_max_iter: 10_000,
            mu_constraint_tol: 1e-8,
        }
    }
}

// ---------------------------------------------------------------------------
// Fixed point
// ---------------------------------------------------------------------------

/// Solution of the self-consistent trace equation for one TX: m_k together
/// with the deterministic resolvent Q_o rebuilt from it.
#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    pub m: Vec<f64>,
    pub q_o: CMat,
    pub alpha: f64,
    pub iterations: usize,
    /// sup_k |m_k - (1/M) tr(Theta_k Q_o)| at the returned iterate.
    pub residual: f64,
}

fn resolvent_equiv(theta: &[CMat], alpha: f64, m: &[f64]) -> Result<CMat> {
    let dim = theta[0].nrows();
    let mf = dim as f64;
    let mut b = CMat::zeros(dim, dim);
    for (l, th) in theta.iter().enumerate() {
        let w = C::new(1.0 / (mf * (1.0 + m[l])), 0.0);
        b += th * w;
    }
    for i in 0..dim {
        b[(i, i)] += C::new(alpha, 0.0);
    }
    b.try_inverse()
        .ok_or_else(|| Error::Numerical("resolvent equivalent not invertible".into()))
}

fn fixed_point_step(theta: &[CMat], alpha: f64, m: &[f64]) -> Result<(Vec<f64>, CMat)> {
    let q = resolvent_equiv(theta, alpha, m)?;
    let mf = theta[0].nrows() as f64;
    let next = theta.iter().map(|th| trace_prod(th, &q).re / mf).collect();
    Ok((next, q))
}

/// Iterate the fixed point m_k = (1/M) tr(Theta_k ((1/M) sum_l
/// Theta_l/(1+m_l) + alpha I)^{-1}) from m = 1/alpha until the sup-norm
/// step falls below `tol`.
///
/// Every third step applies a guarded component-wise Aitken extrapolation;
/// the plain map converges linearly with rate approaching 1 as alpha -> 0,
/// and the extrapolation keeps small-alpha solves within the iteration cap.
pub fn solve_fixed_point(
    theta: &[CMat],
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointSolution> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Invariant(format!("alpha must be positive, got {alpha}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Invariant("tol must be positive".into()));
    }
    let k = theta.len();
    let mut m = vec![1.0 / alpha; k];
    let mut hist: Vec<Vec<f64>> = vec![m.clone()];
    let mut last_change = f64::INFINITY;

    for it in 1..=max_iter {
        let (next, _) = fixed_point_step(theta, alpha, &m)?;
        last_change = next
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if last_change <= tol {
            // One more resolvent from the accepted iterate so that Q_o is
            // exactly the inverse rebuilt from the returned m.
            let q_o = resolvent_equiv(theta, alpha, &next)?;
            let mf = theta[0].nrows() as f64;
            let residual = theta
                .iter()
                .zip(&next)
                .map(|(th, &mk)| (mk - trace_prod(th, &q_o).re / mf).abs())
                .fold(0.0, f64::max);
            return Ok(FixedPointSolution {
                m: next,
                q_o,
                alpha,
                iterations: it,
                residual,
            });
        }
        m = next;
        hist.push(m.clone());

        if hist.len() >= 3 && it % 3 == 0 {
            let m2 = &hist[hist.len() - 1];
            let m1 = &hist[hist.len() - 2];
            let m0 = &hist[hist.len() - 3];
            let mut accel = Vec::with_capacity(k);
            let mut ok = true;
            for i in 0..k {
                let d1 = m1[i] - m0[i];
                let d2 = m2[i] - m1[i];
                let den = d2 - d1;
                if den.abs() > 1e-300 {
                    let a = m2[i] - d2 * d2 / den;
                    if a.is_finite() && a > 0.0 {
                        accel.push(a);
                        continue;
                    }
                }
                ok = false;
                break;
            }
            if ok {
                m = accel;
                hist.clear();
                hist.push(m.clone());
            }
        }
    }
    Err(Error::MaxIter {
        max_iter,
        residual: last_change,
    })
}

/// Closed-form fixed point for the isotropic channel (Theta = I):
/// the positive root of alpha beta m^2 + (alpha beta + 1 - beta) m - beta = 0.
pub fn closed_form_m_iso(alpha: f64, beta: f64) -> f64 {
    let d = alpha * beta - beta + 1.0;
    (beta - 1.0 - alpha * beta + (d * d + 4.0 * alpha * beta * beta).sqrt()) / (2.0 * alpha * beta)
}

// ---------------------------------------------------------------------------
// Gamma functional (general path)
// ---------------------------------------------------------------------------

/// Cached data for one ordered TX pair (j, j'): the weights, the solved
/// gamma_k = Gamma_{j,j'}(Theta_k), and the trace kernels
/// W_k = Q_o^(j) Theta_k Q_o^(j') that turn any evaluation of
/// Gamma_{j,j'}(X) into K cheap trace products.
pub struct GammaPair {
    pub j: usize,
    pub jp: usize,
    /// (w_k + w_k^2 gamma_k) / d_k with w_k = sqrt(c0_jk c0_j'k) +
    /// sqrt(c1_jk c1_j'k) rho_k^(j,j') and d_k = (1+m_k^(j))(1+m_k^(j')):
    /// the per-user weight of the trace kernel t_k(X)
    coef: Vec<C>,
    pub gamma_theta: Vec<C>,
    w_mats: Vec<CMat>,
    pub a_matrix: CMat,
    pub b_vector: DVector<C>,
    pub cond_estimate: f64,
    /// ||A gamma - b||_inf / ||b||_inf
    pub system_residual: f64,
    m_dim: f64,
}

impl GammaPair {
    pub fn build(
        s: &Scenario,
        coeffs: &CsitCoefficients,
        fp_j: &FixedPointSolution,
        fp_jp: &FixedPointSolution,
        j: usize,
        jp: usize,
    ) -> Result<GammaPair> {
        let k = s.k_users();
        let mf = s.m_total() as f64;
        let w: Vec<f64> = (0..k)
            .map(|u| {
                (coeffs.c0[(j, u)] * coeffs.c0[(jp, u)]).sqrt()
                    + (coeffs.c1[(j, u)] * coeffs.c1[(jp, u)]).sqrt() * s.rho(u)[(j, jp)]
            })
            .collect();
        let d: Vec<f64> = (0..k)
            .map(|u| (1.0 + fp_j.m[u]) * (1.0 + fp_jp.m[u]))
            .collect();
        let w_mats: Vec<CMat> = (0..k)
            .map(|u| &fp_j.q_o * s.theta(u) * &fp_jp.q_o)
            .collect();

        // t_k(Theta_l) = (1/M) tr(Theta_k Q_o^(j') Theta_l Q_o^(j)) = tr(W_k Theta_l)/M
        let mut t = DMatrix::<C>::zeros(k, k);
        for u in 0..k {
            for l in 0..k {
                t[(u, l)] = trace_prod(&w_mats[u], s.theta(l)) / C::new(mf, 0.0);
            }
        }

        let mut a = CMat::identity(k, k);
        for l in 0..k {
            for tt in 0..k {
                a[(l, tt)] -= C::new(w[tt] * w[tt] / (mf * d[tt]), 0.0) * t[(tt, l)];
            }
        }
        let mut b = DVector::<C>::zeros(k);
        for l in 0..k {
            let mut acc = C_ZERO;
            for u in 0..k {
                acc += C::new(w[u] / d[u], 0.0) * t[(u, l)];
            }
            b[l] = acc / C::new(mf, 0.0);
        }

        let one_norm = |m: &CMat| -> f64 {
            (0..m.ncols())
                .map(|c| (0..m.nrows()).map(|r| m[(r, c)].norm()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let a_inv = a.clone().try_inverse().ok_or_else(|| {
            Error::Numerical(format!(
                "Gamma system singular for pair ({j},{jp}), condition estimate inf"
            ))
        })?;
        let cond_estimate = one_norm(&a) * one_norm(&a_inv);
        if !cond_estimate.is_finite() || cond_estimate > 1e14 {
            return Err(Error::Numerical(format!(
                "Gamma system ill-conditioned for pair ({j},{jp}), condition estimate {cond_estimate:.3e}"
            )));
        }
        let gamma_theta_vec = &a_inv * &b;
        let resid = (&a * &gamma_theta_vec - &b)
            .iter()
            .map(|x| x.norm())
            .fold(0.0, f64::max);
        let b_norm = b.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let system_residual = if b_norm > 0.0 { resid / b_norm } else { resid };

        let coef: Vec<C> = (0..k)
            .map(|u| {
                (C::new(w[u], 0.0) + C::new(w[u] * w[u], 0.0) * gamma_theta_vec[u])
                    / C::new(d[u], 0.0)
            })
            .collect();

        Ok(GammaPair {
            j,
            jp,
            coef,
            gamma_theta: gamma_theta_vec.iter().copied().collect(),
            w_mats,
            a_matrix: a,
            b_vector: b,
            cond_estimate,
            system_residual,
            m_dim: mf,
        })
    }

    /// Gamma_{j,j'}(X) for an arbitrary M x M matrix X.
    pub fn gamma(&self, x: &CMat) -> C {
        let mut acc = C_ZERO;
        for (u, wm) in self.w_mats.iter().enumerate() {
            acc += self.coef[u] * trace_prod(wm, x);
        }
        acc / C::new(self.m_dim * self.m_dim, 0.0)
    }

    /// Gamma_{j,j'}(I).
    pub fn gamma_identity(&self) -> C {
        let mut acc = C_ZERO;
        for (u, wm) in self.w_mats.iter().enumerate() {
            acc += self.coef[u] * wm.trace();
        }
        acc / C::new(self.m_dim * self.m_dim, 0.0)
    }

    /// Gamma_{j,j'}(E E^H) for the antenna block `rows`.
    pub fn gamma_block(&self, rows: std::ops::Range<usize>) -> C {
        let mut acc = C_ZERO;
        for (u, wm) in self.w_mats.iter().enumerate() {
            acc += self.coef[u] * partial_trace(wm, rows.clone());
        }
        acc / C::new(self.m_dim * self.m_dim, 0.0)
    }

    /// Gamma_{j,j'}(Theta_k E E^H) for the antenna block `rows`.
    pub fn gamma_theta_block(&self, theta_k: &CMat, rows: std::ops::Range<usize>) -> C {
        let mut acc = C_ZERO;
        for (u, wm) in self.w_mats.iter().enumerate() {
            acc += self.coef[u] * partial_trace_prod(wm, theta_k, rows.clone());
        }
        acc / C::new(self.m_dim * self.m_dim, 0.0)
    }

    /// Gamma_{j,j'}(E' E'^H Theta_k E E^H) for blocks `rows` (TX j) and
    /// `cols` (TX j').
    pub fn gamma_block_theta_block(
        &self,
        theta_k: &CMat,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> C {
        let mut acc = C_ZERO;
        for (u, wm) in self.w_mats.iter().enumerate() {
            acc += self.coef[u] * block_trace_prod(wm, theta_k, rows.clone(), cols.clone());
        }
        acc / C::new(self.m_dim * self.m_dim, 0.0)
    }
}

/// Spec'd operation form: evaluate a primed pair cache at X.
pub fn gamma_functional(cache: &GammaPair, x: &CMat) -> C {
    cache.gamma(x)
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Scalar Gamma data for one ordered pair in the isotropic fast path.
struct IsoPairData {
    /// Gamma_{j,j'}(I); every Gamma(Theta_k) equals it and block arguments
    /// scale it by tr(X)/M.
    gamma_i: f64,
}

enum Backend {
    General { pairs: Vec<GammaPair> },
    Iso { pairs: Vec<IsoPairData> },
}

/// All deterministic-equivalent state for one (scenario, alpha) pair:
/// fixed points, Gamma caches, signal coefficients. Reports for different
/// mu vectors reuse it.
pub struct DetEquivEngine<'a> {
    s: &'a Scenario,
    pub coeffs: CsitCoefficients,
    pub alphas: Vec<f64>,
    /// n x K matrix of m_k^(j).
    pub m: DMatrix<f64>,
    /// n x K matrix of Phi_{j,k} = (1/M) tr(Theta_k E_j E_j^H Q_o^(j)).
    pub phi: DMatrix<f64>,
    /// Per-TX Gamma_jj(I) (the deterministic power normalization Psi^(j)).
    pub gamma_ii: Vec<f64>,
    /// Per-TX Gamma_jj(E_j E_j^H).
    pub gamma_block_jj: Vec<f64>,
    /// Per-TX (iterations, residual) of the fixed-point solves.
    pub fp_stats: Vec<(usize, f64)>,
    backend: Backend,
}

impl<'a> DetEquivEngine<'a> {
    pub fn new(s: &'a Scenario, alphas: &[f64], opts: &DetEquivOptions) -> Result<Self> {
        if alphas.len() != s.n_tx() {
            return Err(Error::Dimension(format!(
                "{} alphas for {} TXs",
                alphas.len(),
                s.n_tx()
            )));
        }
        if alphas.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::Invariant("alpha entries must be positive".into()));
        }
        let coeffs = csit_coefficients(s);
        let n = s.n_tx();
        let k = s.k_users();

        if s.is_isotropic() && !opts.force_general_path {
            let beta = s.beta();
            let m_sc: Vec<f64> = alphas.iter().map(|&a| closed_form_m_iso(a, beta)).collect();
            let m = DMatrix::from_fn(n, k, |j, _| m_sc[j]);
            let phi = DMatrix::from_fn(n, k, |j, _| m_sc[j] / n as f64);
            let mut pairs = Vec::with_capacity(n * n);
            for j in 0..n {
                for jp in 0..n {
                    pairs.push(IsoPairData {
                        gamma_i: iso_gamma_pair(s, &coeffs, &m_sc, j, jp)?,
                    });
                }
            }
            let gamma_ii: Vec<f64> = (0..n).map(|j| pairs[j * n + j].gamma_i).collect();
            let gamma_block_jj: Vec<f64> = gamma_ii.iter().map(|g| g / n as f64).collect();
            for (j, &g) in gamma_ii.iter().enumerate() {
                if !(g.is_finite() && g > 0.0) {
                    return Err(Error::Numerical(format!(
                        "Gamma_jj(I) = {g} at TX {j} is not positive"
                    )));
                }
            }
            return Ok(DetEquivEngine {
                s,
                coeffs,
                alphas: alphas.to_vec(),
                m,
                phi,
                gamma_ii,
                gamma_block_jj,
                fp_stats: vec![(0, 0.0); n],
                backend: Backend::Iso { pairs },
            });
        }

        // general path: one fixed point per distinct alpha
        let mut fps: Vec<FixedPointSolution> = Vec::with_capacity(n);
        let mut slots: Vec<usize> = Vec::with_capacity(n);
        for &a in alphas {
            if let Some(idx) = fps.iter().position(|f| f.alpha.to_bits() == a.to_bits()) {
                slots.push(idx);
            } else {
                fps.push(solve_fixed_point(s.theta_all(), a, opts.fp_tol, opts.fp_max_iter)?);
                slots.push(fps.len() - 1);
            }
        }
        let fp_of = |j: usize| -> &FixedPointSolution { &fps[slots[j]] };

        let m = DMatrix::from_fn(n, k, |j, u| fp_of(j).m[u]);
        let mf = s.m_total() as f64;
        let phi = DMatrix::from_fn(n, k, |j, u| {
            partial_trace_prod(&fp_of(j).q_o, s.theta(u), s.tx_block(j)).re / mf
        });

        let mut pairs = Vec::with_capacity(n * n);
        for j in 0..n {
            for jp in 0..n {
                pairs.push(GammaPair::build(s, &coeffs, fp_of(j), fp_of(jp), j, jp)?);
            }
        }
        let mut gamma_ii = Vec::with_capacity(n);
        let mut gamma_block_jj = Vec::with_capacity(n);
        for j in 0..n {
            let pair = &pairs[j * n + j];
            let gi = pair.gamma_identity();
            let ge = pair.gamma_block(s.tx_block(j));
            if gi.im.abs() > 1e-8 * gi.re.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "Gamma_jj(I) at TX {j} has imaginary part {:.3e}",
                    gi.im
                )));
            }
            if !(gi.re.is_finite() && gi.re > 0.0) {
                return Err(Error::Numerical(format!(
                    "Gamma_jj(I) = {} at TX {j} is not positive",
                    gi.re
                )));
            }
            gamma_ii.push(gi.re);
            gamma_block_jj.push(ge.re);
        }
        let fp_stats = (0..n)
            .map(|j| (fp_of(j).iterations, fp_of(j).residual))
            .collect();
        Ok(DetEquivEngine {
            s,
            coeffs,
            alphas: alphas.to_vec(),
            m,
            phi,
            gamma_ii,
            gamma_block_jj,
            fp_stats,
            backend: Backend::General { pairs },
        })
    }

    /// The three Gamma terms of the interference for user k and ordered
    /// pair (j, j'): Gamma(E' E'^H Theta_k E E^H), Gamma(Theta_k E E^H),
    /// Gamma(Theta_k).
    pub fn interference_gammas(&self, k: usize, j: usize, jp: usize) -> (C, C, C) {
        let n = self.s.n_tx();
        match &self.backend {
            Backend::Iso { pairs } => {
                let g = pairs[j * n + jp].gamma_i;
                let nf = n as f64;
                let g1 = if j == jp { g / nf } else { 0.0 };
                (C::new(g1, 0.0), C::new(g / nf, 0.0), C::new(g, 0.0))
            }
            Backend::General { pairs } => {
                let pair = &pairs[j * n + jp];
                let g1 = pair.gamma_block_theta_block(
                    self.s.theta(k),
                    self.s.tx_block(j),
                    self.s.tx_block(jp),
                );
                let g2 = pair.gamma_theta_block(self.s.theta(k), self.s.tx_block(j));
                let g3 = pair.gamma_theta[k];
                (g1, g2, g3)
            }
        }
    }

    /// Access the general-path pair caches (None on the isotropic fast path).
    pub fn gamma_pairs(&self) -> Option<&[GammaPair]> {
        match &self.backend {
            Backend::General { pairs } => Some(pairs),
            Backend::Iso { .. } => None,
        }
    }

    /// Per-TX constraint weights Gamma_jj(E_j E_j^H) / Gamma_jj(I).
    pub fn constraint_ratios(&self) -> Vec<f64> {
        self.gamma_block_jj
            .iter()
            .zip(&self.gamma_ii)
            .map(|(e, i)| e / i)
            .collect()
    }

    /// Power scalings realizing the per-TX budgets p_j (summing to P):
    /// mu_j = sqrt(p_j Gamma_jj(I) / (P Gamma_jj(E_j E_j^H))).
    pub fn mu_for_budgets(&self, budgets: &[f64]) -> Result<Vec<f64>> {
        let p = self.s.power_total();
        if budgets.len() != self.s.n_tx() {
            return Err(Error::Dimension(format!(
                "{} budgets for {} TXs",
                budgets.len(),
                self.s.n_tx()
            )));
        }
        if budgets.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
            return Err(Error::Invariant("per-TX budgets must be positive".into()));
        }
        let sum: f64 = budgets.iter().sum();
        if ((sum - p) / p).abs() > 1e-9 {
            return Err(Error::Invariant(format!(
                "budgets sum to {sum}, expected total power {p}"
            )));
        }
        Ok(self
            .constraint_ratios()
            .iter()
            .zip(budgets)
            .map(|(r, b)| (b / (p * r)).sqrt())
            .collect())
    }

    /// Violation of the scaling constraint for a given mu.
    pub fn mu_constraint_gap(&self, mu: &[f64]) -> f64 {
        let s: f64 = self
            .constraint_ratios()
            .iter()
            .zip(mu)
            .map(|(r, m)| m * m * r)
            .sum();
        (s - 1.0).abs()
    }

    /// Evaluate Theorem-2 quantities for a mu satisfying the scaling
    /// constraint.
    pub fn report(&self, mu: &[f64], opts: &DetEquivOptions) -> Result<DetEquivReport> {
        let n = self.s.n_tx();
        let k = self.s.k_users();
        if mu.len() != n {
            return Err(Error::Dimension(format!("{} mu entries for {n} TXs", mu.len())));
        }
        if mu.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Invariant("mu entries must be positive".into()));
        }
        let gap = self.mu_constraint_gap(mu);
        if gap > opts.mu_constraint_tol {
            return Err(Error::Invariant(format!(
                "mu violates the power scaling constraint by {gap:.3e} (tol {:.1e})",
                opts.mu_constraint_tol
            )));
        }

        let p = self.s.power_total();
        let c0 = &self.coeffs.c0;
        let c2 = &self.coeffs.c2;
        let mut warnings = Vec::new();
        let mut sinr_o = Vec::with_capacity(k);
        let mut i_o = Vec::with_capacity(k);
        let mut max_imag: f64 = 0.0;

        for u in 0..k {
            let mut signal = 0.0;
            for j in 0..n {
                signal += mu[j] * (c0[(j, u)] / self.gamma_ii[j]).sqrt() * self.phi[(j, u)]
                    / (1.0 + self.m[(j, u)]);
            }

            let mut interf = C_ZERO;
            for j in 0..n {
                for jp in 0..n {
                    let (g1, g2, g3) = self.interference_gammas(u, j, jp);
                    let norm = mu[j] * mu[jp] / (self.gamma_ii[j] * self.gamma_ii[jp]).sqrt();
                    let quad = g1
                        - g2 * C::new(
                            2.0 * c0[(jp, u)] * self.phi[(jp, u)] / (1.0 + self.m[(jp, u)]),
                            0.0,
                        )
                        + g3 * C::new(
                            self.phi[(j, u)] * self.phi[(jp, u)]
                                * (c0[(j, u)] * c0[(jp, u)]
                                    + self.s.rho(u)[(j, jp)] * c2[(j, u)] * c2[(jp, u)])
                                / ((1.0 + self.m[(j, u)]) * (1.0 + self.m[(jp, u)])),
                            0.0,
                        );
                    interf += C::new(norm, 0.0) * quad;
                }
            }
            let mut ik = p * interf.re;
            max_imag = max_imag.max((p * interf.im).abs());
            if ik < 0.0 {
                if ik < -1e-8 {
                    warnings.push(format!("I_o[{u}] = {ik:.3e} clamped to 0"));
                }
                ik = 0.0;
            }
            i_o.push(ik);
            sinr_o.push(p * signal * signal / (1.0 + ik));
        }
        if max_imag > 1e-8 {
            warnings.push(format!(
                "interference accumulated imaginary residue {max_imag:.3e}"
            ));
        }

        let sum_rate_o = sinr_o.iter().map(|&x| (1.0 + x).log2()).sum();
        Ok(DetEquivReport {
            sinr_o,
            i_o,
            phi: self.phi.clone(),
            psi_o: self.gamma_ii.clone(),
            mu: mu.to_vec(),
            alpha: self.alphas.clone(),
            sum_rate_o,
            warnings,
        })
    }
}

/// Closed-form Gamma_{j,j'}(I) on an isotropic scenario.
fn iso_gamma_pair(
    s: &Scenario,
    coeffs: &CsitCoefficients,
    m_sc: &[f64],
    j: usize,
    jp: usize,
) -> Result<f64> {
    let mf = s.m_total() as f64;
    let k = s.k_users();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for u in 0..k {
        let w = (coeffs.c0[(j, u)] * coeffs.c0[(jp, u)]).sqrt()
            + (coeffs.c1[(j, u)] * coeffs.c1[(jp, u)]).sqrt() * s.rho(u)[(j, jp)];
        s1 += w;
        s2 += w * w;
    }
    s1 /= mf;
    s2 /= mf;
    let denom = ((1.0 + m_sc[j]) / m_sc[j]) * ((1.0 + m_sc[jp]) / m_sc[jp]) - s2;
    if denom.abs() < 1e-14 {
        return Err(Error::Numerical(format!(
            "isotropic Gamma denominator vanished for pair ({j},{jp})"
        )));
    }
    Ok(s1 / denom)
}

// ---------------------------------------------------------------------------
// Reports and top-level operations
// ---------------------------------------------------------------------------

/// Deterministic equivalents for one (alpha, mu) point.
#[derive(Debug, Clone)]
pub struct DetEquivReport {
    /// Per-user SINR deterministic equivalent.
    pub sinr_o: Vec<f64>,
    /// Per-user interference equivalent (clamped at 0).
    pub i_o: Vec<f64>,
    /// n x K signal coefficients Phi_{j,k}.
    pub phi: DMatrix<f64>,
    /// Per-TX Gamma_jj(I), the deterministic power normalization.
    pub psi_o: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
    /// sum_k log2(1 + SINR_k).
    pub sum_rate_o: f64,
    pub warnings: Vec<String>,
}

/// Theorem-2 deterministic equivalent of the per-user SINR.
///
/// `params.mu` must satisfy the power scaling constraint
/// sum_j mu_j^2 Gamma_jj(E_j E_j^H)/Gamma_jj(I) = 1 (use
/// [`mu_from_per_tx_power`] to construct it from per-TX budgets).
pub fn sinr_det_equiv(
    s: &Scenario,
    params: &PrecoderParams,
    opts: &DetEquivOptions,
) -> Result<DetEquivReport> {
    let engine = DetEquivEngine::new(s, &params.alpha, opts)?;
    engine.report(&params.mu, opts)
}

/// Power scalings mu_j realizing given per-TX average transmit powers.
pub fn mu_from_per_tx_power(
    budgets: &[f64],
    s: &Scenario,
    alphas: &[f64],
    opts: &DetEquivOptions,
) -> Result<Vec<f64>> {
    DetEquivEngine::new(s, alphas, opts)?.mu_for_budgets(budgets)
}

// ---------------------------------------------------------------------------
// Isotropic closed-form specializations (independent oracle path)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsoKind {
    /// rho = 1, per-user sigma equal across TXs, common alpha.
    Centralized,
    /// Off-diagonal rho = 0, common alpha.
    FullyDistributed,
    /// General rho / sigma, per-TX alpha.
    Dcsi,
}

/// Closed-form SINR equivalents for the isotropic channel, written directly
/// from the specialized displays rather than through the general engine. All
/// three kinds assume mu = 1 (equal per-TX power).
pub fn iso_specializations(
    kind: IsoKind,
    s: &Scenario,
    params: &PrecoderParams,
) -> Result<DetEquivReport> {
    if !s.is_isotropic() {
        return Err(Error::Invariant(
            "isotropic specializations require Theta_k = I".into(),
        ));
    }
    if params.mu.iter().any(|&m| (m - 1.0).abs() > 1e-12) {
        return Err(Error::Invariant(
            "isotropic specializations assume mu = 1 (equal per-TX power)".into(),
        ));
    }
    if params.alpha.len() != s.n_tx() {
        return Err(Error::Dimension("alpha length mismatch".into()));
    }
    let n = s.n_tx();
    let k = s.k_users();
    let coeffs = csit_coefficients(s);

    let common_alpha = params.alpha.iter().all(|&a| a == params.alpha[0]);
    match kind {
        IsoKind::Centralized => {
            if !common_alpha {
                return Err(Error::Invariant("centralized kind needs a common alpha".into()));
            }
            for u in 0..k {
                for j in 0..n {
                    for jp in 0..n {
                        if s.rho(u)[(j, jp)] != 1.0 {
                            return Err(Error::Invariant(format!(
                                "centralized kind needs rho = 1, got rho[{u}][{j}][{jp}] = {}",
                                s.rho(u)[(j, jp)]
                            )));
                        }
                    }
                    if s.sigma()[(j, u)] != s.sigma()[(0, u)] {
                        return Err(Error::Invariant(
                            "centralized kind needs sigma equal across TXs".into(),
                        ));
                    }
                }
            }
            Ok(iso_centralized(s, &coeffs, params.alpha[0]))
        }
        IsoKind::FullyDistributed => {
            if !common_alpha {
                return Err(Error::Invariant(
                    "fully distributed kind needs a common alpha".into(),
                ));
            }
            for u in 0..k {
                for j in 0..n {
                    for jp in 0..n {
                        if j != jp && s.rho(u)[(j, jp)] != 0.0 {
                            return Err(Error::Invariant(format!(
                                "fully distributed kind needs off-diagonal rho = 0, got rho[{u}][{j}][{jp}] = {}",
                                s.rho(u)[(j, jp)]
                            )));
                        }
                    }
                }
            }
            Ok(iso_fully_distributed(s, &coeffs, params.alpha[0]))
        }
        IsoKind::Dcsi => Ok(iso_dcsi(s, &coeffs, &params.alpha)),
    }
}

/// Centralized isotropic closed form: SINR_k =
/// (1-sigma_k^2)(beta (1+m)^2 - m^2) / (1-sigma_k^2 + (1+m)^2 sigma_k^2 + (1+m)^2/P).
fn iso_centralized(s: &Scenario, coeffs: &CsitCoefficients, alpha: f64) -> DetEquivReport {
    let beta = s.beta();
    let p = s.power_total();
    let n = s.n_tx();
    let k = s.k_users();
    let m = closed_form_m_iso(alpha, beta);
    let op = 1.0 + m;
    let gamma_i = m * m / (beta * op * op - m * m);

    let mut sinr_o = Vec::with_capacity(k);
    let mut i_o = Vec::with_capacity(k);
    for u in 0..k {
        let c0 = coeffs.c0[(0, u)];
        let s2 = coeffs.c1[(0, u)];
        sinr_o.push(c0 * (beta * op * op - m * m) / (c0 + op * op * s2 + op * op / p));
        // interference of the same display, recovered from the identity
        // 1 + I = (1+m)^2 (1 + P sigma^2 + P c0 / (1+m)^2 ...)
        i_o.push(p * (op * op - 2.0 * c0 * m * op + c0 * m * m) / (op * op));
    }
    let sum_rate_o = sinr_o.iter().map(|&x| (1.0 + x).log2()).sum();
    DetEquivReport {
        sinr_o,
        i_o,
        phi: DMatrix::from_element(n, k, m / n as f64),
        psi_o: vec![gamma_i; n],
        mu: vec![1.0; n],
        alpha: vec![alpha; n],
        sum_rate_o,
        warnings: Vec::new(),
    }
}

/// Fully distributed isotropic closed form (off-diagonal rho = 0).
fn iso_fully_distributed(s: &Scenario, coeffs: &CsitCoefficients, alpha: f64) -> DetEquivReport {
    let beta = s.beta();
    let p = s.power_total();
    let n = s.n_tx();
    let k = s.k_users();
    let mf = s.m_total() as f64;
    let nf = n as f64;
    let m = closed_form_m_iso(alpha, beta);
    let op = 1.0 + m;
    let zf_gain = beta * op * op - m * m;

    // Gamma_{j,j'}: off-diagonal pairs use sqrt(c0 c0') weights; the
    // diagonal pair has weight 1 (rho_k^(j,j) = 1 always)
    let mut gamma = vec![vec![0.0; n]; n];
    for j in 0..n {
        for jp in 0..n {
            let (mut s1, mut s2) = (0.0, 0.0);
            for u in 0..k {
                let w = if j == jp {
                    1.0
                } else {
                    (coeffs.c0[(j, u)] * coeffs.c0[(jp, u)]).sqrt()
                };
                s1 += w;
                s2 += w * w;
            }
            gamma[j][jp] = (s1 / mf) / (op * op / (m * m) - s2 / mf);
        }
    }

    let mut sinr_o = Vec::with_capacity(k);
    let mut i_o = Vec::with_capacity(k);
    for u in 0..k {
        let mut sig = 0.0;
        for j in 0..n {
            sig += coeffs.c0[(j, u)].sqrt();
        }
        sig /= nf;
        let num = p * sig * sig * zf_gain / (op * op);

        let mut ik = p;
        for j in 0..n {
            for jp in 0..n {
                let c0j = coeffs.c0[(j, u)];
                let cross = if j == jp { c0j } else { c0j * coeffs.c0[(jp, u)] };
                let bracket = 2.0 * c0j + m * (2.0 * c0j - cross);
                ik -= p * zf_gain * gamma[j][jp] / (nf * nf * op * op * m) * bracket;
            }
        }
        let ik = ik.max(0.0);
        i_o.push(ik);
        sinr_o.push(num / (1.0 + ik));
    }
    let sum_rate_o = sinr_o.iter().map(|&x| (1.0 + x).log2()).sum();
    DetEquivReport {
        sinr_o,
        i_o,
        phi: DMatrix::from_element(n, k, m / nf),
        psi_o: vec![gamma[0][0]; n],
        mu: vec![1.0; n],
        alpha: vec![alpha; n],
        sum_rate_o,
        warnings: Vec::new(),
    }
}

/// D-CSI isotropic closed form with per-TX alpha, general sigma and rho.
fn iso_dcsi(s: &Scenario, coeffs: &CsitCoefficients, alphas: &[f64]) -> DetEquivReport {
    let beta = s.beta();
    let p = s.power_total();
    let n = s.n_tx();
    let k = s.k_users();
    let mf = s.m_total() as f64;
    let nf = n as f64;
    let m: Vec<f64> = alphas.iter().map(|&a| closed_form_m_iso(a, beta)).collect();

    // per-user Gamma would be needed if rho varied by user; fold the user
    // loop into the pair sums instead
    let mut gamma = vec![vec![vec![0.0; k]; n]; n]; // [j][jp][user]: shared across users unless rho varies
    for j in 0..n {
        for jp in 0..n {
            let (mut s1, mut s2) = (0.0, 0.0);
            for u in 0..k {
                let w = (coeffs.c0[(j, u)] * coeffs.c0[(jp, u)]).sqrt()
                    + (coeffs.c1[(j, u)] * coeffs.c1[(jp, u)]).sqrt() * s.rho(u)[(j, jp)];
                s1 += w;
                s2 += w * w;
            }
            let g = (s1 / mf)
                / (((1.0 + m[j]) / m[j]) * ((1.0 + m[jp]) / m[jp]) - s2 / mf);
            for u in 0..k {
                gamma[j][jp][u] = g;
            }
        }
    }

    let mut sinr_o = Vec::with_capacity(k);
    let mut i_o = Vec::with_capacity(k);
    for u in 0..k {
        let mut sig = 0.0;
        for j in 0..n {
            sig += (coeffs.c0[(j, u)] / gamma[j][j][u]).sqrt() * m[j] / (1.0 + m[j]);
        }
        sig /= nf;

        let mut ik = p;
        for j in 0..n {
            for jp in 0..n {
                let term1 = 2.0 * coeffs.c0[(j, u)] / (nf * nf) * m[j] / (1.0 + m[j]);
                let cross = s.rho(u)[(j, jp)] * coeffs.c2[(j, u)] * coeffs.c2[(jp, u)]
                    + coeffs.c0[(j, u)] * coeffs.c0[(jp, u)];
                let term2 = cross * m[j] * m[jp] / (nf * nf * (1.0 + m[j]) * (1.0 + m[jp]));
                ik -= p * gamma[j][jp][u] / (gamma[j][j][u] * gamma[jp][jp][u]).sqrt()
                    * (term1 - term2);
            }
        }
        let ik = ik.max(0.0);
        i_o.push(ik);
        sinr_o.push(p * sig * sig / (1.0 + ik));
    }
    let sum_rate_o = sinr_o.iter().map(|&x| (1.0 + x).log2()).sum();
    DetEquivReport {
        sinr_o,
        i_o,
        phi: DMatrix::from_fn(n, k, |j, _| m[j] / nf),
        psi_o: (0..n).map(|j| gamma[j][j][0]).collect(),
        mu: vec![1.0; n],
        alpha: alphas.to_vec(),
        sum_rate_o,
        warnings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{preset_symmetric, Scenario};
    use approx::assert_relative_eq;

    fn iso_scenario(n: usize, m_per_tx: usize, k: usize, sigma_sq: f64, rho: f64) -> Scenario {
        Scenario::builder()
            .dimensions(n, m_per_tx, k)
            .power_linear(100.0)
            .sigma_sq_scalar(sigma_sq)
            .rho_scalar(rho)
            .theta_identity()
            .seed(1)
            .build()
            .unwrap()
    }

    fn identity_thetas(m: usize, k: usize) -> Vec<CMat> {
        vec![CMat::identity(m, m); k]
    }

    #[test]
    fn fixed_point_golden_ratio() {
        // Theta = I, beta = 1, alpha = 1: m = (sqrt(5) - 1) / 2
        let theta = identity_thetas(8, 8);
        let fp = solve_fixed_point(&theta, 1.0, 1e-12, 10_000).unwrap();
        let want = (5f64.sqrt() - 1.0) / 2.0;
        for &mk in &fp.m {
            assert_relative_eq!(mk, want, epsilon = 1e-12);
        }
        assert!(fp.residual <= 1e-12);
    }

    #[test]
    fn fixed_point_satisfies_scalar_equation() {
        for (m_dim, k) in [(8, 8), (16, 8), (12, 3)] {
            for alpha in [0.05, 0.5, 2.0] {
                let beta = m_dim as f64 / k as f64;
                let theta = identity_thetas(m_dim, k);
                let fp = solve_fixed_point(&theta, alpha, 1e-13, 10_000).unwrap();
                let m = fp.m[0];
                assert_relative_eq!(
                    m,
                    1.0 / (alpha + (1.0 / beta) / (1.0 + m)),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn fixed_point_large_alpha_expansion() {
        // resolvent ~ I/alpha, so m_k ~ tr(Theta_k)/(M alpha)
        let s = Scenario::builder()
            .dimensions(2, 4, 4)
            .power_linear(10.0)
            .sigma_scalar(0.2)
            .rho_scalar(0.3)
            .theta_exponential_scalar(0.5)
            .seed(1)
            .build()
            .unwrap();
        let fp = solve_fixed_point(s.theta_all(), 1e6, 1e-13, 10_000).unwrap();
        let mf = s.m_total() as f64;
        for (u, &mk) in fp.m.iter().enumerate() {
            let approx_m = s.theta(u).trace().re / (mf * 1e6);
            assert_relative_eq!(mk, approx_m, max_relative = 1e-2);
        }
    }

    #[test]
    fn fixed_point_rebuild_invariant_general_theta() {
        let s = Scenario::builder()
            .dimensions(2, 5, 5)
            .power_linear(10.0)
            .sigma_scalar(0.2)
            .rho_scalar(0.3)
            .theta_exponential_per_user((0..5).map(|i| 0.1 * i as f64).collect())
            .seed(1)
            .build()
            .unwrap();
        let fp = solve_fixed_point(s.theta_all(), 0.2, 1e-12, 10_000).unwrap();
        assert!(fp.m.iter().all(|&x| x > 0.0));
        assert!(fp.residual <= 1e-12, "residual {}", fp.residual);
        let rebuilt = resolvent_equiv(s.theta_all(), 0.2, &fp.m).unwrap();
        assert!((&rebuilt - &fp.q_o).norm() / fp.q_o.norm() < 1e-10);
    }

    #[test]
    fn closed_form_matches_iteration_on_grid() {
        assert_relative_eq!(
            closed_form_m_iso(1.0, 1.0),
            (5f64.sqrt() - 1.0) / 2.0,
            epsilon = 1e-15
        );
        for beta_idx in [(8usize, 8usize), (16, 8), (32, 8)] {
            let (m_dim, k) = beta_idx;
            let beta = m_dim as f64 / k as f64;
            for alpha in [0.01, 0.1, 1.0, 10.0] {
                let theta = identity_thetas(m_dim, k);
                let fp = solve_fixed_point(&theta, alpha, 1e-13, 10_000).unwrap();
                assert_relative_eq!(
                    fp.m[0],
                    closed_form_m_iso(alpha, beta),
                    epsilon = 1e-12
                );
            }
        }
        // alpha -> infinity drives m to 0+
        assert!(closed_form_m_iso(1e12, 2.0) > 0.0);
        assert!(closed_form_m_iso(1e12, 2.0) < 1e-11);
    }

    #[test]
    fn tiny_alpha_converges_within_cap() {
        let theta = identity_thetas(8, 8);
        let fp = solve_fixed_point(&theta, 1e-6, 1e-12, 10_000).unwrap();
        assert_relative_eq!(fp.m[0], closed_form_m_iso(1e-6, 1.0), max_relative = 1e-9);
        assert!(fp.iterations < 10_000);
    }

    fn general_engine<'a>(s: &'a Scenario, alphas: &[f64]) -> DetEquivEngine<'a> {
        let opts = DetEquivOptions {
            force_general_path: true,
            ..Default::default()
        };
        DetEquivEngine::new(s, alphas, &opts).unwrap()
    }

    #[test]
    fn gamma_identity_closed_form_single_pair() {
        // j = j', Theta = I: Gamma(I) = m^2 / (beta (1+m)^2 - m^2) and
        // Gamma(E_j E_j^H) = Gamma(I)/n
        let s = iso_scenario(2, 4, 8, 0.3, 0.5);
        let eng = general_engine(&s, &[0.7, 0.7]);
        let pairs = eng.gamma_pairs().unwrap();
        let m = closed_form_m_iso(0.7, s.beta());
        let want = m * m / (s.beta() * (1.0 + m) * (1.0 + m) - m * m);
        let g = pairs[0].gamma_identity();
        assert_relative_eq!(g.re, want, max_relative = 1e-10);
        assert!(g.im.abs() < 1e-12);
        let ge = pairs[0].gamma_block(s.tx_block(0));
        assert_relative_eq!(ge.re, want / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn gamma_cross_pair_matches_isotropic_closed_form() {
        let s = iso_scenario(3, 4, 12, 0.25, 0.6);
        let alphas = [0.3, 0.5, 0.8];
        let eng = general_engine(&s, &alphas);
        let pairs = eng.gamma_pairs().unwrap();
        let coeffs = csit_coefficients(&s);
        let m: Vec<f64> = alphas.iter().map(|&a| closed_form_m_iso(a, s.beta())).collect();
        for j in 0..3 {
            for jp in 0..3 {
                let want = iso_gamma_pair(&s, &coeffs, &m, j, jp).unwrap();
                let got = pairs[j * 3 + jp].gamma_identity();
                assert_relative_eq!(got.re, want, max_relative = 1e-8);
                assert!(got.im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gamma_system_residual_and_conditioning() {
        let s = Scenario::builder()
            .dimensions(2, 6, 6)
            .power_linear(50.0)
            .sigma_sq_per_tx(vec![0.1, 0.3])
            .rho_scalar(0.4)
            .theta_exponential_per_user((0..6).map(|i| 0.08 * i as f64).collect())
            .seed(2)
            .build()
            .unwrap();
        let eng = general_engine(&s, &[0.2, 0.35]);
        for pair in eng.gamma_pairs().unwrap() {
            assert!(
                pair.system_residual <= 1e-10,
                "pair ({},{}) residual {}",
                pair.j,
                pair.jp,
                pair.system_residual
            );
            assert!(pair.cond_estimate.is_finite());
        }
    }

    #[test]
    fn gamma_conjugate_symmetry() {
        let s = Scenario::builder()
            .dimensions(2, 5, 5)
            .power_linear(20.0)
            .sigma_sq_per_tx(vec![0.2, 0.45])
            .rho_scalar(0.35)
            .theta_exponential_per_user(vec![0.0, 0.1, 0.25, 0.4, 0.55])
            .seed(3)
            .build()
            .unwrap();
        let eng = general_engine(&s, &[0.15, 0.6]);
        let pairs = eng.gamma_pairs().unwrap();
        let m = s.m_total();
        // pseudo-random complex test matrix
        let mut st = 5u64;
        let mut next = move || {
            st = st
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((st >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let x = CMat::from_fn(m, m, |_, _| Complex::new(next(), next()));
        let g_fwd = pairs[1].gamma(&x); // (0,1)
        let g_rev = pairs[2].gamma(&x.adjoint()); // (1,0)
        assert_relative_eq!(g_fwd.re, g_rev.conj().re, max_relative = 1e-9);
        assert_relative_eq!(g_fwd.im, g_rev.conj().im, max_relative = 1e-9);
        // Gamma_jj(X) real for Hermitian X
        let xh = (&x + x.adjoint()) * Complex::new(0.5, 0.0);
        assert!(pairs[0].gamma(&xh).im.abs() < 1e-12);
    }

    #[test]
    fn fast_path_equals_general_path_on_isotropic() {
        let s = preset_symmetric();
        let alphas = vec![0.01, 0.02, 0.05];
        let opts = DetEquivOptions::default();
        let eng_fast = DetEquivEngine::new(&s, &alphas, &opts).unwrap();
        let eng_gen = general_engine(&s, &alphas);
        let mu = eng_fast.mu_for_budgets(s.per_tx_power()).unwrap();
        let rep_fast = eng_fast.report(&mu, &opts).unwrap();
        let rep_gen = eng_gen.report(&mu, &opts).unwrap();
        for u in 0..s.k_users() {
            assert_relative_eq!(rep_fast.sinr_o[u], rep_gen.sinr_o[u], max_relative = 1e-8);
            assert_relative_eq!(rep_fast.i_o[u], rep_gen.i_o[u], max_relative = 1e-8);
        }
        assert_relative_eq!(rep_fast.sum_rate_o, rep_gen.sum_rate_o, max_relative = 1e-8);
    }

    #[test]
    fn centralized_closed_form_matches_general_pipeline() {
        // rho = 1, equal sigma and alpha: the §-style closed form
        let s = iso_scenario(3, 4, 12, 0.3, 1.0);
        let alpha = 0.2;
        let eng = general_engine(&s, &[alpha; 3]);
        let mu = eng.mu_for_budgets(s.per_tx_power()).unwrap();
        let rep = eng.report(&mu, &DetEquivOptions::default()).unwrap();

        let params = PrecoderParams::uniform(3, alpha).unwrap();
        let oracle = iso_specializations(IsoKind::Centralized, &s, &params).unwrap();
        for u in 0..s.k_users() {
            assert_relative_eq!(rep.sinr_o[u], oracle.sinr_o[u], max_relative = 1e-8);
            assert_relative_eq!(rep.i_o[u], oracle.i_o[u], max_relative = 1e-8);
        }
    }

    #[test]
    fn dcsi_closed_form_nests_special_cases() {
        let s_c = iso_scenario(3, 4, 12, 0.2, 1.0);
        let params = PrecoderParams::uniform(3, 0.15).unwrap();
        let cen = iso_specializations(IsoKind::Centralized, &s_c, &params).unwrap();
        let dcsi = iso_specializations(IsoKind::Dcsi, &s_c, &params).unwrap();
        for u in 0..s_c.k_users() {
            assert_relative_eq!(cen.sinr_o[u], dcsi.sinr_o[u], max_relative = 1e-12);
        }

        let s_d = iso_scenario(3, 4, 12, 0.2, 0.0);
        let fd = iso_specializations(IsoKind::FullyDistributed, &s_d, &params).unwrap();
        let dcsi_d = iso_specializations(IsoKind::Dcsi, &s_d, &params).unwrap();
        for u in 0..s_d.k_users() {
            assert_relative_eq!(fd.sinr_o[u], dcsi_d.sinr_o[u], max_relative = 1e-12);
        }
    }

    #[test]
    fn dcsi_closed_form_matches_general_on_table_setting() {
        let s = preset_symmetric();
        let params = PrecoderParams::uniform(3, 1.0 / (s.beta() * s.power_total())).unwrap();
        let oracle = iso_specializations(IsoKind::Dcsi, &s, &params).unwrap();
        let eng = general_engine(&s, &params.alpha);
        let rep = eng.report(&params.mu, &DetEquivOptions::default()).unwrap();
        for u in 0..s.k_users() {
            assert_relative_eq!(rep.sinr_o[u], oracle.sinr_o[u], max_relative = 1e-8);
        }
        assert_relative_eq!(rep.sum_rate_o, oracle.sum_rate_o, max_relative = 1e-8);
    }

    #[test]
    fn blind_tx_contributes_no_signal() {
        // sigma = 1 at one TX: c0 = 0 kills its signal term
        let mut sigma = DMatrix::from_element(3, 6, 0.1f64.sqrt());
        for u in 0..6 {
            sigma[(2, u)] = 1.0;
        }
        let s = Scenario::builder()
            .dimensions(3, 2, 6)
            .power_linear(100.0)
            .sigma_grid(sigma)
            .rho_scalar(0.5)
            .theta_identity()
            .seed(1)
            .build()
            .unwrap();
        let params = PrecoderParams::uniform(3, 0.1).unwrap();
        let full = iso_specializations(IsoKind::Dcsi, &s, &params).unwrap();

        // dropping the blind TX's term changes nothing in the signal sum
        let coeffs = csit_coefficients(&s);
        assert_eq!(coeffs.c0[(2, 0)], 0.0);
        assert!(full.sinr_o[0] > 0.0);
    }

    #[test]
    fn mu_constraint_enforced_and_budget_mu() {
        let s = preset_symmetric();
        let opts = DetEquivOptions::default();
        let eng = DetEquivEngine::new(&s, &[0.1; 3], &opts).unwrap();

        // equal budgets on the isotropic channel give mu = 1
        let mu = eng.mu_for_budgets(s.per_tx_power()).unwrap();
        for &m in &mu {
            assert_relative_eq!(m, 1.0, epsilon = 1e-12);
        }
        assert!(eng.mu_constraint_gap(&mu) <= 1e-10);

        // asymmetric budgets: mu_j = sqrt(n p_j / P)
        let p = s.power_total();
        let budgets = vec![p / 2.0, p / 4.0, p / 4.0];
        let mu = eng.mu_for_budgets(&budgets).unwrap();
        assert_relative_eq!(mu[0], (1.5f64).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(mu[1], (0.75f64).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(mu[2], (0.75f64).sqrt(), epsilon = 1e-12);
        assert!(eng.mu_constraint_gap(&mu) <= 1e-10);

        // violating mu is rejected
        let bad = vec![2.0, 2.0, 2.0];
        assert!(eng.report(&bad, &opts).is_err());
    }

    #[test]
    fn single_tx_mu_is_one() {
        let s = Scenario::builder()
            .dimensions(1, 8, 8)
            .power_linear(10.0)
            .sigma_scalar(0.3)
            .rho_scalar(0.0)
            .theta_identity()
            .seed(1)
            .build()
            .unwrap();
        let eng = DetEquivEngine::new(&s, &[0.2], &DetEquivOptions::default()).unwrap();
        let mu = eng.mu_for_budgets(s.per_tx_power()).unwrap();
        assert_relative_eq!(mu[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zf_limit_interference_vanishes() {
        // sigma = 0, beta > 1, alpha -> 0: I_k -> 0
        let s = iso_scenario(2, 8, 8, 0.0, 1.0);
        let params = PrecoderParams::uniform(2, 1e-6).unwrap();
        let rep = sinr_det_equiv(&s, &params, &DetEquivOptions::default()).unwrap();
        for u in 0..8 {
            assert!(rep.i_o[u] <= 1e-6, "I_o[{u}] = {}", rep.i_o[u]);
        }
        // noise-limited ZF regime: SINR of order P (beta - 1)
        let p = s.power_total();
        assert!(rep.sinr_o[0] > 0.5 * p * (s.beta() - 1.0));
        assert!(rep.sinr_o[0] < 2.0 * p * s.beta());
    }
}
