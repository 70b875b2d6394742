//! Stability predicate for SEM coefficient matrices.
//!
//! A coefficient matrix `B` is accepted only when its spectral radius is at
//! most `1 - eps_stab`. This is deliberately stronger than "no eigenvalue
//! equals one": unit-modulus eigenvalues carry zero prior mass under a
//! continuous prior, and testing the unit circle exactly is numerically
//! meaningless. The margin also guarantees `I - B` is invertible, which every
//! likelihood evaluation relies on.

use nalgebra::DMatrix;
use thiserror::Error;

/// Iteration cap handed to the QR eigenvalue iteration. Generous for p <= 50.
const MAX_EIGEN_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StabilityError {
    #[error("eigenvalue iteration failed to converge")]
    EigenFailure,
}

/// Summary of the eigenvalue geometry relevant to the stability test.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Largest eigenvalue modulus.
    pub spectral_radius: f64,
    /// min over eigenvalues of |lambda - 1|; zero means I - B is singular.
    pub unit_eigenvalue_gap: f64,
    pub stable: bool,
}

/// Largest modulus over the (possibly complex) eigenvalues of a square real
/// matrix, via a dense real Schur decomposition.
pub fn spectral_radius(b: &DMatrix<f64>) -> Result<f64, StabilityError> {
    Ok(complex_eigen_moduli(b)?
        .into_iter()
        .fold(0.0_f64, f64::max))
}

/// `spectral_radius(b) <= 1 - eps_stab`, with exact norm bounds short-circuiting
/// the eigensolve where they already decide the comparison. The sampler
/// stability-tests millions of proposal and prior draws; most are decidable
/// from the bounds alone.
pub fn is_stable(b: &DMatrix<f64>, eps_stab: f64) -> Result<bool, StabilityError> {
    assert!(eps_stab > 0.0, "eps_stab must be positive");
    let threshold = 1.0 - eps_stab;
    if !b.iter().all(|v| v.is_finite()) {
        // Non-finite entries cannot form a stable matrix; the eigensolver is
        // not trustworthy on them either.
        return Ok(false);
    }
    if radius_upper_bound(b) <= threshold {
        return Ok(true);
    }
    if radius_lower_bound(b) > threshold {
        return Ok(false);
    }
    Ok(spectral_radius(b)? <= threshold)
}

/// Full report: radius, distance of the spectrum to the point 1, and the
/// predicate value at `eps_stab`.
pub fn report(b: &DMatrix<f64>, eps_stab: f64) -> Result<StabilityReport, StabilityError> {
    assert!(eps_stab > 0.0, "eps_stab must be positive");
    let moduli_and_gaps = complex_eigen_pairs(b)?;
    let spectral_radius = moduli_and_gaps
        .iter()
        .map(|(m, _)| *m)
        .fold(0.0_f64, f64::max);
    let unit_eigenvalue_gap = moduli_and_gaps
        .iter()
        .map(|(_, g)| *g)
        .fold(f64::INFINITY, f64::min);
    Ok(StabilityReport {
        spectral_radius,
        unit_eigenvalue_gap,
        stable: spectral_radius <= 1.0 - eps_stab,
    })
}

/// min(max abs row sum, max abs column sum, Frobenius norm): each is an upper
/// bound on the spectral radius (induced-norm / Schur inequalities).
fn radius_upper_bound(b: &DMatrix<f64>) -> f64 {
    let n = b.nrows();
    let mut row = vec![0.0_f64; n];
    let mut col = vec![0.0_f64; n];
    let mut frob_sq = 0.0_f64;
    for j in 0..n {
        for i in 0..n {
            let a = b[(i, j)].abs();
            row[i] += a;
            col[j] += a;
            frob_sq += a * a;
        }
    }
    let row_max = row.into_iter().fold(0.0_f64, f64::max);
    let col_max = col.into_iter().fold(0.0_f64, f64::max);
    row_max.min(col_max).min(frob_sq.sqrt())
}

/// sqrt(|tr(B^2)| / p) <= radius, since tr(B^2) = sum of lambda_i^2 and each
/// |lambda_i| is at most the radius.
fn radius_lower_bound(b: &DMatrix<f64>) -> f64 {
    let n = b.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut tr_b2 = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            tr_b2 += b[(i, j)] * b[(j, i)];
        }
    }
    (tr_b2.abs() / n as f64).sqrt()
}

fn complex_eigen_moduli(b: &DMatrix<f64>) -> Result<Vec<f64>, StabilityError> {
    Ok(complex_eigen_pairs(b)?.into_iter().map(|(m, _)| m).collect())
}

/// (modulus, |lambda - 1|) per eigenvalue.
fn complex_eigen_pairs(b: &DMatrix<f64>) -> Result<Vec<(f64, f64)>, StabilityError> {
    assert_eq!(b.nrows(), b.ncols(), "matrix must be square");
    assert!(
        b.iter().all(|v| v.is_finite()),
        "matrix entries must be finite"
    );
    if b.nrows() == 0 {
        return Ok(vec![]);
    }
    let schur = nalgebra::linalg::Schur::try_new(b.clone(), f64::EPSILON, MAX_EIGEN_ITER)
        .ok_or(StabilityError::EigenFailure)?;
    let eig = schur.complex_eigenvalues();
    Ok(eig
        .iter()
        .map(|l| {
            let modulus = (l.re * l.re + l.im * l.im).sqrt();
            let gap = ((l.re - 1.0) * (l.re - 1.0) + l.im * l.im).sqrt();
            (modulus, gap)
        })
        .collect())
}
