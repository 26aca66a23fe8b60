//! Small complex linear algebra helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;

use crate::{Error, Result};

/// Dense complex matrix, the workhorse type of the crate.
pub type CMat = DMatrix<Complex<f64>>;

pub const C_ZERO: Complex<f64> = Complex::new(0.0, 0.0);
pub const C_ONE: Complex<f64> = Complex::new(1.0, 0.0);

/// tr(A B) without forming the product: sum_{i,c} A[i,c] * B[c,i].
pub fn trace_prod(a: &CMat, b: &CMat) -> Complex<f64> {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C_ZERO;
    for i in 0..a.nrows() {
        for c in 0..a.ncols() {
            acc += a[(i, c)] * b[(c, i)];
        }
    }
    acc
}

/// tr(E^H A B E) where E selects the contiguous row range `rows`:
/// sum over a in `rows` of (A B)[a, a].
pub fn partial_trace_prod(a: &CMat, b: &CMat, rows: std::ops::Range<usize>) -> Complex<f64> {
    let mut acc = C_ZERO;
    for i in rows {
        for c in 0..a.ncols() {
            acc += a[(i, c)] * b[(c, i)];
        }
    }
    acc
}

/// tr(A E' E'^H B E E^H) for contiguous blocks: sum over a in `rows`,
/// c in `cols` of A[a, c] * B[c, a].
pub fn block_trace_prod(
    a: &CMat,
    b: &CMat,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Complex<f64> {
    let mut acc = C_ZERO;
    for i in rows {
        for c in cols.clone() {
            acc += a[(i, c)] * b[(c, i)];
        }
    }
    acc
}

/// Partial diagonal sum: sum over i in `rows` of A[i, i].
pub fn partial_trace(a: &CMat, rows: std::ops::Range<usize>) -> Complex<f64> {
    rows.map(|i| a[(i, i)]).sum()
}

/// Max absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in i..a.ncols() {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Hermitian PSD square root via eigendecomposition, eigenvalues clamped at 0.
///
/// Fails on a non-Hermitian input (defect > `herm_tol`) or an eigenvalue
/// below `eig_floor`.
pub fn hermitian_sqrt(a: &CMat, herm_tol: f64, eig_floor: f64) -> Result<CMat> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "square matrix expected, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let defect = hermitian_defect(a);
    if defect > herm_tol {
        return Err(Error::Invariant(format!(
            "matrix not Hermitian (defect {defect:.3e} > {herm_tol:.1e})"
        )));
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut min_eig = f64::INFINITY;
    for &l in eig.eigenvalues.iter() {
        if l < min_eig {
            min_eig = l;
        }
    }
    if min_eig < eig_floor {
        return Err(Error::Invariant(format!(
            "matrix not PSD (eigenvalue {min_eig:.3e} below {eig_floor:.1e})"
        )));
    }
    let n = a.nrows();
    // V sqrt(D) V^H, clamping small negatives to zero
    let mut scaled = eig.eigenvectors.clone();
    for (c, &l) in eig.eigenvalues.iter().enumerate() {
        let s = Complex::new(l.max(0.0).sqrt(), 0.0);
        for r in 0..n {
            scaled[(r, c)] *= s;
        }
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// Compensated (Kahan) summation; deterministic for a fixed iteration order.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// splitmix64 seed mixer, used to derive independent per-trial RNG streams.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_mat(n: usize, state: &mut u64) -> CMat {
        CMat::from_fn(n, n, |_, _| {
            let mut next = || {
                *state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((*state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            };
            Complex::new(next(), next())
        })
    }

    #[test]
    fn trace_prod_matches_full_product() {
        let mut st = 7u64;
        let a = lcg_mat(5, &mut st);
        let b = lcg_mat(5, &mut st);
        let full = (&a * &b).trace();
        assert!((trace_prod(&a, &b) - full).norm() < 1e-12);
    }

    #[test]
    fn partial_traces_match_selector_products() {
        let mut st = 3u64;
        let m = 6;
        let a = lcg_mat(m, &mut st);
        let b = lcg_mat(m, &mut st);
        let block = 2..4;
        let mut e = CMat::zeros(m, m);
        for i in block.clone() {
            e[(i, i)] = C_ONE;
        }
        let want = (&a * &b * &e).trace();
        assert!((partial_trace_prod(&a, &b, block.clone()) - want).norm() < 1e-12);

        let cols = 0..2;
        let mut ep = CMat::zeros(m, m);
        for i in cols.clone() {
            ep[(i, i)] = C_ONE;
        }
        let want2 = (&a * &ep * &b * &e).trace();
        assert!((block_trace_prod(&a, &b, block, cols) - want2).norm() < 1e-12);
    }

    #[test]
    fn sqrt_of_constructed_psd_matrix() {
        let mut st = 11u64;
        let b = lcg_mat(8, &mut st);
        let a = &b * b.adjoint();
        let s = hermitian_sqrt(&a, 1e-12, -1e-8).unwrap();
        assert!(hermitian_defect(&s) < 1e-10);
        assert!(((&s * &s) - &a).norm() / a.norm() < 1e-10);
    }

    #[test]
    fn sqrt_rejects_non_hermitian_and_indefinite() {
        let mut a = CMat::identity(3, 3);
        a[(0, 1)] = Complex::new(0.5, 0.0); // asymmetric
        assert!(hermitian_sqrt(&a, 1e-12, -1e-8).is_err());

        let mut b = CMat::identity(3, 3);
        b[(2, 2)] = Complex::new(-1.0, 0.0);
        assert!(hermitian_sqrt(&b, 1e-12, -1e-8).is_err());
    }

    #[test]
    fn mix_seed_separates_streams() {
        let a = mix_seed(1, 0);
        let b = mix_seed(1, 1);
        let c = mix_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(1, 0));
    }
}
