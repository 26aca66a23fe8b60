//! Problem definition for a D-CSIT CoMP instance: dimensions, power budget,
//! per-user channel correlation, CSIT error levels sigma and cross-TX error
//! correlation rho, plus everything derived from them (correlation square
//! roots, per-user mixing factors, hashes).
//!
//! # Scenario file format
//!
//! ```toml
//! [dimensions]
//! n_tx = 3
//! m_per_tx = 10
//! k_users = 30
//!
//! [power]
//! total_db = 20.0                     # or total_linear = 100.0 (exactly one)
//! # per_tx_fraction = [0.5, 0.25, 0.25]   # optional, defaults to equal split
//! # per_tx_linear = [50.0, 25.0, 25.0]    # alternative absolute form
//!
//! [csit]
//! sigma_sq = 0.1      # or sigma = ...; scalar | per-TX list | n x K grid
//! rho = 0.81          # scalar (off-diagonal) | n x n matrix | per-user list
//!
//! [theta]
//! kind = "identity"   # "identity" | "exponential" | "file"
//! # r = 0.5           # exponential: scalar or per-user list
//! # path = "theta.bin"
//!
//! [seed]
//! value = 1
//! ```
//!
//! Power is given in dB in hand-written files (`total_db`); canonical dumps
//! written by [`Scenario::to_canonical_toml`] use the exact linear values so
//! that load(write(s)) round-trips bit-exactly.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::{hermitian_sqrt, CMat};
use crate::{Error, Result};

/// Eigenvalue floor below which a cross-TX correlation matrix R_k is
/// rejected as not PSD.
const RHO_PSD_TOL: f64 = 1e-10;

/// Relative tolerance on sum(per-TX power) = total power.
const POWER_SUM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// How the total power was specified; preserved so that writing a scenario
/// back to disk reproduces the authoritative value bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerSpec {
    Db(f64),
    Linear(f64),
}

impl PowerSpec {
    pub fn linear(&self) -> f64 {
        match *self {
            PowerSpec::Db(db) => 10f64.powf(db / 10.0),
            PowerSpec::Linear(p) => p,
        }
    }
}

/// Channel correlation family.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    /// Theta_k = I for every user (isotropic channel).
    Identity,
    /// Exponential correlation Theta_k[a,b] = r_k^|a-b|.
    Exponential { r: RSpec },
    /// Matrices read from a binary blob referenced by a scenario file.
    File { path: String },
    /// Matrices supplied programmatically.
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RSpec {
    Scalar(f64),
    PerUser(Vec<f64>),
}

/// A validated, immutable D-CSIT CoMP problem instance.
///
/// All invariants hold after construction: beta >= 1, sigma in [0,1],
/// rho symmetric with unit diagonal and PSD per user, Theta_k Hermitian PSD.
/// Safe to share across threads.
#[derive(Debug, Clone)]
pub struct Scenario {
    n_tx: usize,
    m_per_tx: usize,
    k_users: usize,
    power_spec: PowerSpec,
    power_total: f64,
    per_tx_power: Vec<f64>,
    /// n x K matrix of sigma_k^(j) (error levels, not squared).
    sigma: DMatrix<f64>,
    /// Per-user n x n cross-TX error correlation matrices R_k.
    rho: Vec<DMatrix<f64>>,
    theta_spec: ThetaSpec,
    /// Per-user M x M correlation matrices Theta_k.
    theta: Vec<CMat>,
    rng_seed: u64,
    // derived
    theta_sqrt: Vec<CMat>,
    rho_factors: Vec<DMatrix<f64>>,
    isotropic: bool,
}

impl Scenario {
    pub fn builder() -> ScenarioBuilder {
        ScenarioBuilder::default()
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }
    pub fn m_per_tx(&self) -> usize {
        self.m_per_tx
    }
    pub fn m_total(&self) -> usize {
        self.n_tx * self.m_per_tx
    }
    pub fn k_users(&self) -> usize {
        self.k_users
    }
    pub fn beta(&self) -> f64 {
        self.m_total() as f64 / self.k_users as f64
    }
    pub fn power_total(&self) -> f64 {
        self.power_total
    }
    pub fn per_tx_power(&self) -> &[f64] {
        &self.per_tx_power
    }
    /// sigma_k^(j) as an n x K matrix (row = TX, column = user).
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }
    /// rho_k^(j,j') for user k.
    pub fn rho(&self, k: usize) -> &DMatrix<f64> {
        &self.rho[k]
    }
    pub fn rho_all(&self) -> &[DMatrix<f64>] {
        &self.rho
    }
    pub fn theta(&self, k: usize) -> &CMat {
        &self.theta[k]
    }
    pub fn theta_all(&self) -> &[CMat] {
        &self.theta
    }
    pub fn theta_sqrt(&self, k: usize) -> &CMat {
        &self.theta_sqrt[k]
    }
    pub fn theta_spec(&self) -> &ThetaSpec {
        &self.theta_spec
    }
    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }
    /// True when every Theta_k is exactly the identity, enabling the
    /// closed-form isotropic path in the deterministic-equivalent module.
    pub fn is_isotropic(&self) -> bool {
        self.isotropic
    }
    /// Cholesky-style factors L_k with L_k L_k^T = R_k, computed at
    /// construction (see [`correlation_factors`]).
    pub fn rho_factors(&self) -> &[DMatrix<f64>] {
        &self.rho_factors
    }
    /// Antenna index range owned by TX j inside the stacked M-vector.
    pub fn tx_block(&self, j: usize) -> std::ops::Range<usize> {
        j * self.m_per_tx..(j + 1) * self.m_per_tx
    }

    // -- overrides used by sweeps ------------------------------------------

    /// Same scenario with every off-diagonal rho_k^(j,j') replaced by `rho`.
    pub fn with_rho_scalar(&self, rho: f64) -> Result<Scenario> {
        let mut b = self.to_builder();
        b.rho = Some(RhoInput::Scalar(rho));
        b.build()
    }

    /// Same scenario with a different total power (dB).
    pub fn with_power_db(&self, db: f64) -> Result<Scenario> {
        let mut b = self.to_builder();
        // keep the per-TX split as fractions of the new total
        let fractions: Vec<f64> =
            self.per_tx_power.iter().map(|p| p / self.power_total).collect();
        b.power = Some(PowerSpec::Db(db));
        b.per_tx = Some(PerTxInput::Fraction(fractions));
        b.build()
    }

    /// Same scenario rescaled to `k` users at fixed beta and TX count.
    ///
    /// Requires sigma and rho to be constant across users and a resizable
    /// Theta family (identity, or exponential with scalar r).
    pub fn with_k_users(&self, k: usize) -> Result<Scenario> {
        let m_total = self.beta() * k as f64;
        let m_per_tx = m_total / self.n_tx as f64;
        if m_per_tx.fract() != 0.0 || m_per_tx < 1.0 {
            return Err(Error::Invariant(format!(
                "k_users={k} gives non-integer antennas per TX ({m_per_tx}) at beta={}",
                self.beta()
            )));
        }
        for col in 1..self.k_users {
            if self.sigma.column(col) != self.sigma.column(0) {
                return Err(Error::Invariant(
                    "cannot rescale k_users: sigma varies across users".into(),
                ));
            }
        }
        if self.rho.iter().any(|r| r != &self.rho[0]) {
            return Err(Error::Invariant(
                "cannot rescale k_users: rho varies across users".into(),
            ));
        }
        let theta_spec = match &self.theta_spec {
            ThetaSpec::Identity => ThetaSpec::Identity,
            ThetaSpec::Exponential { r: RSpec::Scalar(r) } => {
                ThetaSpec::Exponential { r: RSpec::Scalar(*r) }
            }
            other => {
                return Err(Error::Invariant(format!(
                    "cannot rescale k_users for theta family {other:?}"
                )))
            }
        };
        let mut b = self.to_builder();
        b.m_per_tx = m_per_tx as usize;
        b.k_users = k;
        b.sigma = Some(SigmaInput::PerTx(self.sigma.column(0).iter().copied().collect()));
        b.rho = Some(RhoInput::Matrix(self.rho[0].clone()));
        b.theta = Some(theta_spec);
        b.theta_explicit = None;
        b.build()
    }

    /// The centralized view TX j holds of the network when it ignores the
    /// D-CSIT structure: every TX shares its estimate (rho = 1, sigma rows
    /// all equal to row j), with equal power split.
    pub fn centralized_view(&self, j: usize) -> Result<Scenario> {
        let row: Vec<f64> = self.sigma.row(j).iter().copied().collect();
        let sigma = DMatrix::from_fn(self.n_tx, self.k_users, |_, k| row[k]);
        let mut b = self.to_builder();
        b.sigma = Some(SigmaInput::Grid(sigma));
        b.rho = Some(RhoInput::Scalar(1.0));
        b.per_tx = None;
        b.build()
    }

    fn to_builder(&self) -> ScenarioBuilder {
        ScenarioBuilder {
            n_tx: self.n_tx,
            m_per_tx: self.m_per_tx,
            k_users: self.k_users,
            power: Some(self.power_spec),
            per_tx: Some(PerTxInput::Linear(self.per_tx_power.clone())),
            sigma: Some(SigmaInput::Grid(self.sigma.clone())),
            rho: Some(RhoInput::Tensor(self.rho.clone())),
            theta: Some(self.theta_spec.clone()),
            theta_explicit: if matches!(self.theta_spec, ThetaSpec::Explicit | ThetaSpec::File { .. })
            {
                Some(self.theta.clone())
            } else {
                None
            },
            seed: self.rng_seed,
        }
    }

    // -- serialization ------------------------------------------------------

    /// Canonical TOML dump: sigma as a full grid, rho as a full tensor,
    /// exact linear per-TX powers. Reloading it reproduces every numeric
    /// field bit-exactly.
    pub fn to_canonical_toml(&self) -> String {
        let file = ScenarioFile {
            dimensions: DimensionsSec {
                n_tx: self.n_tx as u64,
                m_per_tx: self.m_per_tx as u64,
                k_users: self.k_users as u64,
            },
            power: PowerSec {
                total_db: match self.power_spec {
                    PowerSpec::Db(db) => Some(db),
                    PowerSpec::Linear(_) => None,
                },
                total_linear: match self.power_spec {
                    PowerSpec::Db(_) => None,
                    PowerSpec::Linear(p) => Some(p),
                },
                per_tx_fraction: None,
                per_tx_linear: Some(self.per_tx_power.clone()),
            },
            csit: CsitSec {
                sigma: Some(SigmaField::Grid(
                    (0..self.n_tx)
                        .map(|j| self.sigma.row(j).iter().copied().collect())
                        .collect(),
                )),
                sigma_sq: None,
                rho: Some(RhoField::Tensor(
                    self.rho.iter().map(matrix_to_rows).collect(),
                )),
            },
            theta: match &self.theta_spec {
                ThetaSpec::Identity => ThetaSec {
                    kind: "identity".into(),
                    r: None,
                    path: None,
                    sha256: None,
                },
                ThetaSpec::Exponential { r } => ThetaSec {
                    kind: "exponential".into(),
                    r: Some(match r {
                        RSpec::Scalar(v) => RField::Scalar(*v),
                        RSpec::PerUser(v) => RField::PerUser(v.clone()),
                    }),
                    path: None,
                    sha256: None,
                },
                ThetaSpec::File { path } => ThetaSec {
                    kind: "file".into(),
                    r: None,
                    path: Some(path.clone()),
                    sha256: Some(hex_digest(&theta_blob_bytes(&self.theta))),
                },
                ThetaSpec::Explicit => ThetaSec {
                    kind: "file".into(),
                    r: None,
                    path: Some("theta.bin".into()),
                    sha256: Some(hex_digest(&theta_blob_bytes(&self.theta))),
                },
            },
            seed: SeedSec { value: self.rng_seed },
        };
        toml::to_string(&file).expect("scenario serialization cannot fail")
    }

    /// Write the scenario (and, for explicit Theta, its matrix blob) next to
    /// `path`.
    pub fn write_to_path(&self, path: &Path) -> Result<()> {
        if matches!(self.theta_spec, ThetaSpec::Explicit) {
            let blob = path.with_file_name("theta.bin");
            std::fs::write(&blob, theta_blob_bytes(&self.theta))?;
        }
        std::fs::write(path, self.to_canonical_toml())?;
        Ok(())
    }

    /// Short content hash identifying the scenario in CSV metadata.
    pub fn hash(&self) -> String {
        hex_digest(self.to_canonical_toml().as_bytes())[..12].to_string()
    }
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn hex_digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum SigmaInput {
    Scalar(f64),
    PerTx(Vec<f64>),
    Grid(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub enum RhoInput {
    /// One off-diagonal correlation for all TX pairs and users.
    Scalar(f64),
    /// One n x n correlation matrix for all users.
    Matrix(DMatrix<f64>),
    /// Per-user n x n correlation matrices.
    Tensor(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone)]
pub enum PerTxInput {
    Fraction(Vec<f64>),
    Linear(Vec<f64>),
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioBuilder {
    n_tx: usize,
    m_per_tx: usize,
    k_users: usize,
    power: Option<PowerSpec>,
    per_tx: Option<PerTxInput>,
    sigma: Option<SigmaInput>,
    rho: Option<RhoInput>,
    theta: Option<ThetaSpec>,
    theta_explicit: Option<Vec<CMat>>,
    seed: u64,
}

impl ScenarioBuilder {
    pub fn dimensions(mut self, n_tx: usize, m_per_tx: usize, k_users: usize) -> Self {
        self.n_tx = n_tx;
        self.m_per_tx = m_per_tx;
        self.k_users = k_users;
        self
    }
    pub fn power_db(mut self, db: f64) -> Self {
        self.power = Some(PowerSpec::Db(db));
        self
    }
    pub fn power_linear(mut self, p: f64) -> Self {
        self.power = Some(PowerSpec::Linear(p));
        self
    }
    pub fn per_tx_fractions(mut self, f: Vec<f64>) -> Self {
        self.per_tx = Some(PerTxInput::Fraction(f));
        self
    }
    pub fn sigma_scalar(mut self, s: f64) -> Self {
        self.sigma = Some(SigmaInput::Scalar(s));
        self
    }
    pub fn sigma_sq_scalar(self, s2: f64) -> Self {
        self.sigma_scalar(s2.sqrt())
    }
    pub fn sigma_sq_per_tx(mut self, s2: Vec<f64>) -> Self {
        self.sigma = Some(SigmaInput::PerTx(s2.into_iter().map(f64::sqrt).collect()));
        self
    }
    pub fn sigma_grid(mut self, grid: DMatrix<f64>) -> Self {
        self.sigma = Some(SigmaInput::Grid(grid));
        self
    }
    pub fn rho_scalar(mut self, rho: f64) -> Self {
        self.rho = Some(RhoInput::Scalar(rho));
        self
    }
    pub fn rho_matrix(mut self, m: DMatrix<f64>) -> Self {
        self.rho = Some(RhoInput::Matrix(m));
        self
    }
    pub fn rho_tensor(mut self, t: Vec<DMatrix<f64>>) -> Self {
        self.rho = Some(RhoInput::Tensor(t));
        self
    }
    pub fn theta_identity(mut self) -> Self {
        self.theta = Some(ThetaSpec::Identity);
        self
    }
    pub fn theta_exponential_scalar(mut self, r: f64) -> Self {
        self.theta = Some(ThetaSpec::Exponential { r: RSpec::Scalar(r) });
        self
    }
    pub fn theta_exponential_per_user(mut self, r: Vec<f64>) -> Self {
        self.theta = Some(ThetaSpec::Exponential { r: RSpec::PerUser(r) });
        self
    }
    pub fn theta_matrices(mut self, theta: Vec<CMat>) -> Self {
        self.theta = Some(ThetaSpec::Explicit);
        self.theta_explicit = Some(theta);
        self
    }
    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(self) -> Result<Scenario> {
        let (n, m_per_tx, k) = (self.n_tx, self.m_per_tx, self.k_users);
        if n == 0 || m_per_tx == 0 || k == 0 {
            return Err(Error::Invariant(
                "dimensions must be positive (n_tx, m_per_tx, k_users)".into(),
            ));
        }
        let m_total = n * m_per_tx;
        let beta = m_total as f64 / k as f64;
        if beta < 1.0 {
            return Err(Error::Invariant(format!(
                "beta = M/K = {m_total}/{k} = {beta} must be >= 1"
            )));
        }

        let power_spec = self
            .power
            .ok_or_else(|| Error::Invariant("power not specified".into()))?;
        let power_total = power_spec.linear();
        if !(power_total.is_finite() && power_total > 0.0) {
            return Err(Error::Invariant(format!(
                "total power must be positive, got {power_total}"
            )));
        }

        let per_tx_power = match self.per_tx {
            None => vec![power_total / n as f64; n],
            Some(PerTxInput::Fraction(f)) => {
                check_per_tx(&f, n, 1.0, "per_tx_fraction")?;
                f.iter().map(|x| x * power_total).collect()
            }
            Some(PerTxInput::Linear(p)) => {
                check_per_tx(&p, n, power_total, "per_tx_linear")?;
                p
            }
        };

        let sigma = match self.sigma.ok_or_else(|| Error::Invariant("sigma not specified".into()))? {
            SigmaInput::Scalar(s) => DMatrix::from_element(n, k, s),
            SigmaInput::PerTx(v) => {
                if v.len() != n {
                    return Err(Error::Invariant(format!(
                        "per-TX sigma has {} entries, expected n_tx = {n}",
                        v.len()
                    )));
                }
                DMatrix::from_fn(n, k, |j, _| v[j])
            }
            SigmaInput::Grid(g) => {
                if g.nrows() != n || g.ncols() != k {
                    return Err(Error::Invariant(format!(
                        "sigma grid is {}x{}, expected {n}x{k}",
                        g.nrows(),
                        g.ncols()
                    )));
                }
                g
            }
        };
        for j in 0..n {
            for u in 0..k {
                let s = sigma[(j, u)];
                if !(0.0..=1.0).contains(&s) || !s.is_finite() {
                    return Err(Error::Invariant(format!(
                        "sigma[{j}][{u}] = {s} outside [0, 1]"
                    )));
                }
            }
        }

        let rho = expand_rho(self.rho.ok_or_else(|| Error::Invariant("rho not specified".into()))?, n, k)?;
        let rho_factors = correlation_factors(&rho)?;

        let theta_spec = self
            .theta
            .ok_or_else(|| Error::Invariant("theta not specified".into()))?;
        let (theta, isotropic) = match (&theta_spec, self.theta_explicit) {
            (ThetaSpec::Identity, _) => {
                (vec![CMat::identity(m_total, m_total); k], true)
            }
            (ThetaSpec::Exponential { r }, _) => {
                let rs: Vec<f64> = match r {
                    RSpec::Scalar(v) => vec![*v; k],
                    RSpec::PerUser(v) => {
                        if v.len() != k {
                            return Err(Error::Invariant(format!(
                                "per-user r has {} entries, expected k_users = {k}",
                                v.len()
                            )));
                        }
                        v.clone()
                    }
                };
                for &rv in &rs {
                    if !(0.0..1.0).contains(&rv) {
                        return Err(Error::Invariant(format!(
                            "exponential correlation r = {rv} outside [0, 1)"
                        )));
                    }
                }
                let mats = rs
                    .iter()
                    .map(|&rv| {
                        CMat::from_fn(m_total, m_total, |a, b| {
                            Complex::new(rv.powi((a as i32 - b as i32).abs()), 0.0)
                        })
                    })
                    .collect();
                (mats, rs.iter().all(|&rv| rv == 0.0))
            }
            (ThetaSpec::File { .. } | ThetaSpec::Explicit, Some(mats)) => {
                if mats.len() != k {
                    return Err(Error::Invariant(format!(
                        "{} theta matrices supplied, expected k_users = {k}",
                        mats.len()
                    )));
                }
                for (idx, t) in mats.iter().enumerate() {
                    if t.nrows() != m_total || t.ncols() != m_total {
                        return Err(Error::Invariant(format!(
                            "theta[{idx}] is {}x{}, expected {m_total}x{m_total}",
                            t.nrows(),
                            t.ncols()
                        )));
                    }
                }
                let iso = mats.iter().all(|t| t == &CMat::identity(m_total, m_total));
                (mats, iso)
            }
            (ThetaSpec::File { .. } | ThetaSpec::Explicit, None) => {
                return Err(Error::Invariant(
                    "theta matrices missing (file kind requires load_scenario)".into(),
                ))
            }
        };

        // Hermitian PSD validation doubles as the square-root computation.
        let theta_sqrt = theta
            .iter()
            .enumerate()
            .map(|(idx, t)| {
                hermitian_sqrt(t, 1e-12, -1e-8)
                    .map_err(|e| Error::Invariant(format!("theta[{idx}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Scenario {
            n_tx: n,
            m_per_tx,
            k_users: k,
            power_spec,
            power_total,
            per_tx_power,
            sigma,
            rho,
            theta_spec,
            theta,
            rng_seed: self.seed,
            theta_sqrt,
            rho_factors,
            isotropic,
        })
    }
}

fn check_per_tx(v: &[f64], n: usize, expected_sum: f64, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Invariant(format!(
            "{what} has {} entries, expected n_tx = {n}",
            v.len()
        )));
    }
    if v.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::Invariant(format!("{what} entries must be positive")));
    }
    let sum: f64 = v.iter().sum();
    if ((sum - expected_sum) / expected_sum).abs() > POWER_SUM_TOL {
        return Err(Error::Invariant(format!(
            "{what} sums to {sum}, expected {expected_sum}"
        )));
    }
    Ok(())
}

fn expand_rho(input: RhoInput, n: usize, k: usize) -> Result<Vec<DMatrix<f64>>> {
    let tensor = match input {
        RhoInput::Scalar(r) => {
            let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { r });
            vec![m; k]
        }
        RhoInput::Matrix(m) => vec![m; k],
        RhoInput::Tensor(t) => t,
    };
    if tensor.len() != k {
        return Err(Error::Invariant(format!(
            "rho tensor has {} user slices, expected k_users = {k}",
            tensor.len()
        )));
    }
    for (u, m) in tensor.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Invariant(format!(
                "rho[{u}] is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..n {
            if m[(i, i)] != 1.0 {
                return Err(Error::Invariant(format!(
                    "rho[{u}][{i}][{i}] = {} but the diagonal must be 1",
                    m[(i, i)]
                )));
            }
            for j in 0..n {
                let r = m[(i, j)];
                if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                    return Err(Error::Invariant(format!(
                        "rho[{u}][{i}][{j}] = {r} outside [0, 1]"
                    )));
                }
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Invariant(format!(
                        "rho[{u}] not symmetric: rho[{i}][{j}] = {} vs rho[{j}][{i}] = {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
    }
    Ok(tensor)
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// The per-(TX, user) shorthand coefficients c0 = 1 - sigma^2, c1 = sigma^2,
/// c2 = sigma * sqrt(1 - sigma^2).
#[derive(Debug, Clone)]
pub struct CsitCoefficients {
    pub c0: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
}

pub fn csit_coefficients(s: &Scenario) -> CsitCoefficients {
    let sig = s.sigma();
    let c1 = sig.map(|x| x * x);
    let c0 = c1.map(|x| 1.0 - x);
    let c2 = sig.zip_map(&c0, |sv, c0v| sv * c0v.sqrt());
    CsitCoefficients { c0, c1, c2 }
}

/// Maps the two-parameter feedback/backhaul model onto D-CSIT parameters:
/// the local estimate keeps the feedback noise level, the remote one
/// accumulates backhaul noise, and the pair correlation follows from the
/// shared feedback noise component.
///
/// Returns (sigma_local, sigma_remote, rho). At (0, 0) both estimates are
/// exact and identical, so rho = 1 by convention.
pub fn example1_mapping(sigma_fb: f64, sigma_bh: f64) -> Result<(f64, f64, f64)> {
    for (name, v) in [("sigma_fb", sigma_fb), ("sigma_bh", sigma_bh)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Invariant(format!("{name} = {v} outside [0, 1)")));
        }
    }
    if sigma_bh == 0.0 {
        // lossless backhaul: the remote estimate is the local one
        return Ok((sigma_fb, sigma_fb, 1.0));
    }
    let sigma_local = sigma_fb;
    // 1 - (1-a)(1-b) = b + a(1-b), which avoids cancellation for small errors
    let fb2 = sigma_fb * sigma_fb;
    let bh2 = sigma_bh * sigma_bh;
    let sigma_remote = (fb2 + bh2 * (1.0 - fb2)).sqrt();
    let rho = if sigma_remote == 0.0 {
        1.0
    } else {
        sigma_fb * (1.0 - bh2).sqrt() / sigma_remote
    };
    Ok((sigma_local, sigma_remote, rho))
}

/// Factor every per-user cross-TX correlation matrix R_k as L_k L_k^T via a
/// symmetric eigendecomposition with eigenvalues clamped at zero.
///
/// Fails with the offending user index and eigenvalue when some R_k is not
/// PSD, i.e. when the pairwise correlations are jointly infeasible.
pub fn correlation_factors(rho: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    rho.iter()
        .enumerate()
        .map(|(k, r)| {
            let eig = SymmetricEigen::new(r.clone());
            let min_eig = eig.eigenvalues.min();
            if min_eig < -RHO_PSD_TOL {
                return Err(Error::Invariant(format!(
                    "R_k not PSD for k={k} (eigenvalue {min_eig:.6e})"
                )));
            }
            let n = r.nrows();
            let mut l = eig.eigenvectors.clone();
            for (c, &ev) in eig.eigenvalues.iter().enumerate() {
                let s = ev.max(0.0).sqrt();
                for row in 0..n {
                    l[(row, c)] *= s;
                }
            }
            Ok(l)
        })
        .collect()
}

/// Spec'd operation form of [`correlation_factors`] on a whole scenario.
pub fn validate_correlation(s: &Scenario) -> Result<Vec<DMatrix<f64>>> {
    correlation_factors(s.rho_all())
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    dimensions: DimensionsSec,
    power: PowerSec,
    csit: CsitSec,
    theta: ThetaSec,
    seed: SeedSec,
}

#[derive(Serialize, Deserialize)]
struct DimensionsSec {
    n_tx: u64,
    m_per_tx: u64,
    k_users: u64,
}

#[derive(Serialize, Deserialize)]
struct PowerSec {
    #[serde(skip_serializing_if = "Option::is_none")]
    total_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_linear: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_tx_fraction: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_tx_linear: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CsitSec {
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<SigmaField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_sq: Option<SigmaField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<RhoField>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SigmaField {
    Scalar(f64),
    PerTx(Vec<f64>),
    Grid(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RhoField {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
    Tensor(Vec<Vec<Vec<f64>>>),
}

#[derive(Serialize, Deserialize)]
struct ThetaSec {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<RField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RField {
    Scalar(f64),
    PerUser(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct SeedSec {
    value: u64,
}

/// Load and validate a scenario file (see the module docs for the format).
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, path.parent())
}

/// Parse a scenario from TOML text. `base_dir` resolves a theta blob
/// reference; pass `None` where no filesystem is available, in which case
/// kind = "file" is rejected.
pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<Scenario> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;

    let n = file.dimensions.n_tx as usize;
    let k = file.dimensions.k_users as usize;

    let power = match (file.power.total_db, file.power.total_linear) {
        (Some(db), None) => PowerSpec::Db(db),
        (None, Some(p)) => PowerSpec::Linear(p),
        (None, None) => return Err(Error::Parse("[power] needs total_db or total_linear".into())),
        (Some(_), Some(_)) => {
            return Err(Error::Parse(
                "[power] must not set both total_db and total_linear".into(),
            ))
        }
    };
    let per_tx = match (file.power.per_tx_fraction, file.power.per_tx_linear) {
        (Some(f), None) => Some(PerTxInput::Fraction(f)),
        (None, Some(p)) => Some(PerTxInput::Linear(p)),
        (None, None) => None,
        (Some(_), Some(_)) => {
            return Err(Error::Parse(
                "[power] must not set both per_tx_fraction and per_tx_linear".into(),
            ))
        }
    };

    let sigma = match (file.csit.sigma, file.csit.sigma_sq) {
        (Some(s), None) => sigma_field_to_input(s, false)?,
        (None, Some(s)) => sigma_field_to_input(s, true)?,
        (None, None) => return Err(Error::Parse("[csit] needs sigma or sigma_sq".into())),
        (Some(_), Some(_)) => {
            return Err(Error::Parse("[csit] must not set both sigma and sigma_sq".into()))
        }
    };

    let rho = match file.csit.rho {
        Some(RhoField::Scalar(r)) => RhoInput::Scalar(r),
        Some(RhoField::Matrix(rows)) => RhoInput::Matrix(rows_to_matrix(&rows, "rho")?),
        Some(RhoField::Tensor(slices)) => RhoInput::Tensor(
            slices
                .iter()
                .map(|rows| rows_to_matrix(rows, "rho"))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => return Err(Error::Parse("[csit] needs rho".into())),
    };

    let mut builder = ScenarioBuilder {
        n_tx: n,
        m_per_tx: file.dimensions.m_per_tx as usize,
        k_users: k,
        power: Some(power),
        per_tx,
        sigma: Some(sigma),
        rho: Some(rho),
        theta: None,
        theta_explicit: None,
        seed: file.seed.value,
    };

    match file.theta.kind.as_str() {
        "identity" => builder.theta = Some(ThetaSpec::Identity),
        "exponential" => {
            let r = match file.theta.r {
                Some(RField::Scalar(v)) => RSpec::Scalar(v),
                Some(RField::PerUser(v)) => RSpec::PerUser(v),
                None => return Err(Error::Parse("[theta] exponential kind needs r".into())),
            };
            builder.theta = Some(ThetaSpec::Exponential { r });
        }
        "file" => {
            let rel = file
                .theta
                .path
                .ok_or_else(|| Error::Parse("[theta] file kind needs path".into()))?;
            let base = base_dir.ok_or_else(|| {
                Error::Parse("theta kind 'file' needs a filesystem context".into())
            })?;
            let blob_path = base.join(&rel);
            let bytes = std::fs::read(&blob_path)
                .map_err(|e| Error::Parse(format!("theta blob {}: {e}", blob_path.display())))?;
            if let Some(expect) = file.theta.sha256 {
                let got = hex_digest(&bytes);
                if got != expect {
                    return Err(Error::Parse(format!(
                        "theta blob hash mismatch: file has {got}, scenario expects {expect}"
                    )));
                }
            }
            let mats = theta_blob_parse(&bytes)?;
            builder.theta = Some(ThetaSpec::File { path: rel });
            builder.theta_explicit = Some(mats);
        }
        other => return Err(Error::Parse(format!("unknown theta kind '{other}'"))),
    }

    builder.build()
}

fn sigma_field_to_input(f: SigmaField, squared: bool) -> Result<SigmaInput> {
    let conv = |v: f64| if squared { v.sqrt() } else { v };
    Ok(match f {
        SigmaField::Scalar(v) => SigmaInput::Scalar(conv(v)),
        SigmaField::PerTx(v) => SigmaInput::PerTx(v.into_iter().map(conv).collect()),
        SigmaField::Grid(rows) => {
            let m = rows_to_matrix(&rows, "sigma")?;
            SigmaInput::Grid(m.map(conv))
        }
    })
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Parse(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

// -- theta binary blob -------------------------------------------------------

const THETA_MAGIC: &[u8; 8] = b"DCSITHB1";

fn theta_blob_bytes(theta: &[CMat]) -> Vec<u8> {
    let k = theta.len();
    let m = theta[0].nrows();
    let mut out = Vec::with_capacity(8 + 8 + k * m * m * 16);
    out.extend_from_slice(THETA_MAGIC);
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for t in theta {
        for i in 0..m {
            for j in 0..m {
                out.extend_from_slice(&t[(i, j)].re.to_le_bytes());
                out.extend_from_slice(&t[(i, j)].im.to_le_bytes());
            }
        }
    }
    out
}

fn theta_blob_parse(bytes: &[u8]) -> Result<Vec<CMat>> {
    if bytes.len() < 16 || &bytes[..8] != THETA_MAGIC {
        return Err(Error::Parse("theta blob: bad magic".into()));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let need = 16 + k * m * m * 16;
    if bytes.len() != need {
        return Err(Error::Parse(format!(
            "theta blob: {} bytes, expected {need} for {k} matrices of side {m}",
            bytes.len()
        )));
    }
    let mut mats = Vec::with_capacity(k);
    let mut off = 16;
    for _ in 0..k {
        let mut t = CMat::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
                t[(i, j)] = Complex::new(re, im);
                off += 16;
            }
        }
        mats.push(t);
    }
    Ok(mats)
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// The symmetric isotropic reference setting: n=3 TXs with 10 antennas each,
/// K=30 users, P=20 dB, sigma^2 = 0.1 at every TX, off-diagonal rho = 0.81.
pub fn preset_symmetric() -> Scenario {
    Scenario::builder()
        .dimensions(3, 10, 30)
        .power_db(20.0)
        .sigma_sq_per_tx(vec![0.1, 0.1, 0.1])
        .rho_scalar(0.81)
        .theta_identity()
        .seed(1)
        .build()
        .expect("preset is valid")
}

/// The asymmetric variant: per-TX sigma^2 = (0.01, 0.16, 0.49).
pub fn preset_asymmetric() -> Scenario {
    Scenario::builder()
        .dimensions(3, 10, 30)
        .power_db(20.0)
        .sigma_sq_per_tx(vec![0.01, 0.16, 0.49])
        .rho_scalar(0.81)
        .theta_identity()
        .seed(1)
        .build()
        .expect("preset is valid")
}
