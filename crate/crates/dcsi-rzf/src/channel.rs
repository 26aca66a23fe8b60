//! Channel and CSIT sampling.
//!
//! One draw produces the true channel H (rows h_k^H) and the n TX-local
//! estimates H_hat^(j) with
//!
//! ```text
//! h_k        = sqrt(M) Theta_k^{1/2} z_k
//! h_hat_k(j) = sqrt(1 - sigma_jk^2) h_k + sigma_jk sqrt(M) Theta_k^{1/2} q_k(j)
//! ```
//!
//! where z_k and q_k(j) have i.i.d. CN(0, 1/M) entries and the error
//! variables satisfy E[q_k(j) q_k(j')^H] = rho_k^(j,j') / M * I. The joint
//! law across TXs is realized by mixing n independent Gaussian blocks with
//! the per-user factor L_k of R_k = [rho_k^(j,j')], which reproduces every
//! pairwise correlation simultaneously.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::linalg::{hermitian_sqrt, mix_seed, CMat};
use crate::scenario::Scenario;
use crate::{Error, Result};

/// One realization of the true channel and all TX-local estimates.
///
/// The raw variables z and q are retained so tests can reproduce the
/// assembly exactly and verify the prescribed error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// K x M, row k holds h_k^H.
    pub h_true: CMat,
    /// Per-TX K x M estimates, row k holds h_hat_k^(j)H.
    pub h_hat: Vec<CMat>,
    /// K x M underlying i.i.d. variables (rows z_k^H).
    pub z: CMat,
    /// Per-TX K x M error variables (rows q_k^(j)H).
    pub q: Vec<CMat>,
}

/// Deterministic per-trial RNG stream: trials with distinct indices are
/// independent ChaCha streams, and a fixed (seed, trial) pair always yields
/// the same draw regardless of how trials are scheduled.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix_seed(seed, trial))
}

fn fill_cn_entries<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(r, c)] = Complex::new(re * scale, im * scale);
        }
    }
    m
}

/// Sample one channel realization plus the n correlated TX-local estimates.
pub fn sample_channel<R: Rng>(s: &Scenario, rng: &mut R) -> ChannelDraw {
    let (n, m, k) = (s.n_tx(), s.m_total(), s.k_users());
    // each complex entry has variance 1/M: real and imaginary N(0, 1/(2M))
    let scale = 1.0 / (2.0 * m as f64).sqrt();

    let z = fill_cn_entries(k, m, scale, rng);
    let g: Vec<CMat> = (0..n).map(|_| fill_cn_entries(k, m, scale, rng)).collect();

    // q_k^(j) = sum_i L_k[j,i] g_i[k,:]; L_k L_k^T = R_k gives the exact
    // cross-TX correlations for every pair at once.
    let mut q: Vec<CMat> = (0..n).map(|_| CMat::zeros(k, m)).collect();
    for user in 0..k {
        let l = &s.rho_factors()[user];
        for j in 0..n {
            for (i, gi) in g.iter().enumerate() {
                let w = Complex::new(l[(j, i)], 0.0);
                if w.re != 0.0 {
                    let mut row = q[j].row_mut(user);
                    row += gi.row(user) * w;
                }
            }
        }
    }

    let sqrt_m = Complex::new((m as f64).sqrt(), 0.0);
    let mut h_true = CMat::zeros(k, m);
    for user in 0..k {
        if s.is_isotropic() {
            h_true.set_row(user, &(z.row(user) * sqrt_m));
        } else {
            // rows store conjugated vectors; Theta^{1/2} is Hermitian, so
            // h_k^H = sqrt(M) z_k^H Theta_k^{1/2}
            h_true.set_row(user, &(z.row(user) * s.theta_sqrt(user) * sqrt_m));
        }
    }

    let sigma = s.sigma();
    let mut h_hat = Vec::with_capacity(n);
    for j in 0..n {
        let mut hj = CMat::zeros(k, m);
        for user in 0..k {
            let sv = sigma[(j, user)];
            let c0s = Complex::new((1.0 - sv * sv).sqrt(), 0.0);
            let delta = if s.is_isotropic() {
                q[j].row(user) * sqrt_m
            } else {
                q[j].row(user) * s.theta_sqrt(user) * sqrt_m
            };
            hj.set_row(user, &(h_true.row(user) * c0s + delta * Complex::new(sv, 0.0)));
        }
        h_hat.push(hj);
    }

    ChannelDraw { h_true, h_hat, z, q }
}

/// Hermitian PSD square root with eigenvalue clamping at zero; the returned
/// S satisfies S S = theta and is itself Hermitian PSD.
pub fn sqrt_psd(theta: &CMat) -> Result<CMat> {
    hermitian_sqrt(theta, 1e-12, -1e-8)
}

// ---------------------------------------------------------------------------
// Binary dump for regression fixtures
// ---------------------------------------------------------------------------

const DRAW_MAGIC: &[u8; 8] = b"DCSIDRW1";

impl ChannelDraw {
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let k = self.h_true.nrows() as u32;
        let m = self.h_true.ncols() as u32;
        let n = self.h_hat.len() as u32;
        f.write_all(DRAW_MAGIC)?;
        f.write_all(&n.to_le_bytes())?;
        f.write_all(&k.to_le_bytes())?;
        f.write_all(&m.to_le_bytes())?;
        write_cmat(&mut f, &self.h_true)?;
        write_cmat(&mut f, &self.z)?;
        for j in 0..self.h_hat.len() {
            write_cmat(&mut f, &self.h_hat[j])?;
            write_cmat(&mut f, &self.q[j])?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<ChannelDraw> {
        let mut f = std::fs::File::open(path)?;
        let mut header = [0u8; 20];
        f.read_exact(&mut header)?;
        if &header[..8] != DRAW_MAGIC {
            return Err(Error::Parse("channel dump: bad magic".into()));
        }
        let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let h_true = read_cmat(&mut f, k, m)?;
        let z = read_cmat(&mut f, k, m)?;
        let mut h_hat = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for _ in 0..n {
            h_hat.push(read_cmat(&mut f, k, m)?);
            q.push(read_cmat(&mut f, k, m)?);
        }
        Ok(ChannelDraw { h_true, h_hat, z, q })
    }
}

fn write_cmat<W: Write>(w: &mut W, m: &CMat) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].re.to_le_bytes())?;
            w.write_all(&m[(r, c)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_cmat<R: Read>(rd: &mut R, rows: usize, cols: usize) -> Result<CMat> {
    let mut buf = vec![0u8; rows * cols * 16];
    rd.read_exact(&mut buf)?;
    let mut m = CMat::zeros(rows, cols);
    let mut off = 0;
    for r in 0..rows {
        for c in 0..cols {
            let re = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap());
            m[(r, c)] = Complex::new(re, im);
            off += 16;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{preset_symmetric, Scenario};
    use approx::assert_relative_eq;
    use num_complex::Complex;

    fn small_scenario(sigma: f64, rho: f64) -> Scenario {
        Scenario::builder()
            .dimensions(2, 4, 4)
            .power_linear(10.0)
            .sigma_scalar(sigma)
            .rho_scalar(rho)
            .theta_identity()
            .seed(7)
            .build()
            .unwrap()
    }

    #[test]
    fn perfect_csit_reproduces_true_channel() {
        let s = small_scenario(0.0, 0.5);
        let mut rng = trial_rng(s.rng_seed(), 0);
        let d = sample_channel(&s, &mut rng);
        for j in 0..2 {
            assert_relative_eq!((&d.h_hat[j] - &d.h_true).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn centralized_limit_gives_identical_estimates() {
        let s = small_scenario(0.4, 1.0);
        let mut rng = trial_rng(s.rng_seed(), 0);
        let d = sample_channel(&s, &mut rng);
        assert_relative_eq!((&d.h_hat[0] - &d.h_hat[1]).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn assembly_invariants_hold_for_general_theta() {
        let s = Scenario::builder()
            .dimensions(2, 3, 3)
            .power_linear(10.0)
            .sigma_scalar(0.6)
            .rho_scalar(0.3)
            .theta_exponential_scalar(0.5)
            .seed(3)
            .build()
            .unwrap();
        let mut rng = trial_rng(s.rng_seed(), 1);
        let d = sample_channel(&s, &mut rng);
        let m = s.m_total() as f64;
        for user in 0..s.k_users() {
            let want_h = d.z.row(user) * s.theta_sqrt(user) * Complex::new(m.sqrt(), 0.0);
            assert_relative_eq!((d.h_true.row(user) - want_h).norm(), 0.0, epsilon = 1e-13);
            for j in 0..s.n_tx() {
                let sv = s.sigma()[(j, user)];
                let want = d.h_true.row(user) * Complex::new((1.0 - sv * sv).sqrt(), 0.0)
                    + d.q[j].row(user)
                        * s.theta_sqrt(user)
                        * Complex::new(sv * m.sqrt(), 0.0);
                assert_relative_eq!((d.h_hat[j].row(user) - want).norm(), 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn identical_seed_identical_draw() {
        let s = small_scenario(0.3, 0.7);
        let d1 = sample_channel(&s, &mut trial_rng(9, 4));
        let d2 = sample_channel(&s, &mut trial_rng(9, 4));
        assert_eq!(d1, d2);
        let d3 = sample_channel(&s, &mut trial_rng(9, 5));
        assert_ne!(d1, d3);
    }

    #[test]
    fn cross_tx_error_correlation_converges_to_rho() {
        // statistical check of the pairwise error law
        let rho = 0.6;
        let s = Scenario::builder()
            .dimensions(2, 32, 16)
            .power_linear(10.0)
            .sigma_scalar(0.5)
            .rho_scalar(rho)
            .theta_identity()
            .seed(11)
            .build()
            .unwrap();
        let trials = 40;
        let mut num = 0.0;
        let mut den0 = 0.0;
        let mut den1 = 0.0;
        for t in 0..trials {
            let d = sample_channel(&s, &mut trial_rng(s.rng_seed(), t));
            for ((a, b), _) in d.q[0].iter().zip(d.q[1].iter()).zip(0..) {
                num += (a * b.conj()).re;
                den0 += a.norm_sqr();
                den1 += b.norm_sqr();
            }
        }
        let est = num / (den0 * den1).sqrt();
        let n_samples = (trials as usize * s.m_total() * s.k_users()) as f64;
        let tol = 3.0 / n_samples.sqrt();
        assert!(
            (est - rho).abs() < tol.max(3.0 * (1.0 - rho * rho) / n_samples.sqrt()),
            "estimated rho {est} vs {rho} (tol {tol})"
        );
    }

    #[test]
    fn channel_second_moment_matches_theta_trace() {
        let s = Scenario::builder()
            .dimensions(1, 32, 16)
            .power_linear(1.0)
            .sigma_scalar(0.0)
            .rho_scalar(0.0)
            .theta_exponential_scalar(0.6)
            .seed(2)
            .build()
            .unwrap();
        let m = s.m_total() as f64;
        let trials = 200;
        let mut acc = 0.0;
        for t in 0..trials {
            let d = sample_channel(&s, &mut trial_rng(s.rng_seed(), t));
            for user in 0..s.k_users() {
                acc += d.h_true.row(user).norm_squared() / m;
            }
        }
        let mean = acc / (trials * s.k_users() as u64) as f64;
        let want = s.theta(0).trace().re / m; // all users share the same r
        // E[|h|^2/M] = tr(Theta)/M; 5 standard errors of slack
        let std_err = want / ((trials as usize * s.k_users()) as f64).sqrt();
        assert!(
            (mean - want).abs() < 5.0 * std_err,
            "mean {mean} vs {want} (se {std_err})"
        );
    }

    #[test]
    fn sqrt_psd_diagonal_and_identity() {
        let eye = CMat::identity(4, 4);
        assert_relative_eq!((sqrt_psd(&eye).unwrap() - &eye).norm(), 0.0, epsilon = 1e-14);

        let mut d = CMat::zeros(2, 2);
        d[(0, 0)] = Complex::new(4.0, 0.0);
        d[(1, 1)] = Complex::new(9.0, 0.0);
        let s = sqrt_psd(&d).unwrap();
        assert_relative_eq!(s[(0, 0)].re, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s[(1, 1)].re, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn draw_dump_roundtrip() {
        let s = preset_symmetric().with_k_users(6).unwrap();
        let d = sample_channel(&s, &mut trial_rng(1, 0));
        let dir = std::env::temp_dir().join("dcsi_rzf_draw_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("draw.bin");
        d.write_binary(&path).unwrap();
        let d2 = ChannelDraw::read_binary(&path).unwrap();
        assert_eq!(d, d2);
    }
}
