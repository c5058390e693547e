//! Spatial correlation, Rayleigh channel draws and MMSE pilot-based channel
//! estimation statistics.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Negative eigenvalues down to `-PSD_TOL * max_eig` are clipped to zero.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationSpec {
    Uncorrelated,
    Exponential { kappa: f64 },
}

impl CorrelationSpec {
    pub fn kappa(&self) -> f64 {
        match self {
            CorrelationSpec::Uncorrelated => 0.0,
            CorrelationSpec::Exponential { kappa } => *kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kappa();
        if !(0.0..=1.0).contains(&k) {
            return Err(invalid(format!("correlation magnitude {k} outside [0, 1]")));
        }
        Ok(())
    }

    /// Correlation matrix of one link with large-scale gain `beta` and
    /// boresight angle `phi`.
    pub fn matrix(&self, phi: f64, m: usize, beta: f64) -> Result<CMatrix> {
        match self {
            CorrelationSpec::Uncorrelated => Ok(CMatrix::identity(m, m) * Complex64::from(beta)),
            CorrelationSpec::Exponential { kappa } => exp_correlation_matrix(*kappa, phi, m, beta),
        }
    }
}

/// Hermitian Toeplitz matrix with first row `beta * [1, r*, r*^2, ...]`,
/// `r = kappa * exp(i phi)`.
pub fn exp_correlation_matrix(kappa: f64, phi: f64, m: usize, beta: f64) -> Result<CMatrix> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(invalid(format!(
            "correlation magnitude {kappa} outside [0, 1]"
        )));
    }
    if m == 0 {
        return Err(invalid("antenna count must be at least 1"));
    }
    let r = Complex64::from_polar(kappa, phi);
    let mut powers = Vec::with_capacity(m);
    let mut acc = Complex64::new(1.0, 0.0);
    for _ in 0..m {
        powers.push(acc);
        acc *= r;
    }
    Ok(CMatrix::from_fn(m, m, |a, b| {
        if a >= b {
            powers[a - b] * beta
        } else {
            powers[b - a].conj() * beta
        }
    }))
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && (a - a.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let herm = (a + a.adjoint()) * Complex64::from(0.5);
    let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Hermitian and min eigenvalue >= -1e-9 * max eigenvalue.
pub fn is_psd(a: &CMatrix) -> bool {
    if !is_hermitian(a, 1e-9 * a.norm().max(1.0)) {
        return false;
    }
    let ev = hermitian_eigenvalues(a);
    let max = ev.last().copied().unwrap_or(0.0).max(0.0);
    ev.first().is_none_or(|&min| min >= -1e-9 * max)
}

/// Standard circularly-symmetric complex Gaussian sample, unit variance.
#[inline]
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn cn_vector<R: Rng + ?Sized>(m: usize, rng: &mut R) -> CVector {
    CVector::from_fn(m, |_, _| cn01(rng))
}

/// Lower Cholesky factor of a Hermitian matrix, or `None` when a pivot is
/// not positive relative to `rel_tol * max diagonal`. (nalgebra's complex
/// Cholesky takes complex square roots of negative pivots instead of failing.)
pub fn hermitian_cholesky(a: &CMatrix, rel_tol: f64) -> Option<CMatrix> {
    let n = a.nrows();
    if !a.is_square() {
        return None;
    }
    let scale = (0..n).map(|i| a[(i, i)].re).fold(0.0f64, f64::max);
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for p in 0..j {
            d -= l[(j, p)].norm_sqr();
        }
        if !(d > rel_tol * scale) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for p in 0..j {
                v -= l[(i, p)] * l[(j, p)].conj();
            }
            l[(i, j)] = v / djj;
        }
    }
    Some(l)
}

/// Solves `A X = B` given the lower Cholesky factor of `A`.
pub fn cholesky_solve(l: &CMatrix, b: &CMatrix) -> Option<CMatrix> {
    let y = l.solve_lower_triangular(b)?;
    l.adjoint().solve_upper_triangular(&y)
}

/// A factor `S` with `S S^H = R`: Cholesky when `R` is positive definite,
/// otherwise a clipped eigendecomposition.
pub fn sqrt_factor(r: &CMatrix) -> Result<CMatrix> {
    if !r.is_square() {
        return Err(Error::Decomposition(
            "correlation matrix is not square".into(),
        ));
    }
    if r.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Ok(r.clone());
    }
    if let Some(l) = hermitian_cholesky(r, 1e-12) {
        return Ok(l);
    }
    let herm = (r + r.adjoint()) * Complex64::from(0.5);
    let eig = herm.symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let mut scaled = eig.eigenvectors.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -PSD_TOL * max.max(f64::MIN_POSITIVE) {
            return Err(Error::Decomposition(format!(
                "matrix is not positive semidefinite (eigenvalue {lambda:e})"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(c).scale_mut(s);
    }
    Ok(scaled)
}

/// Correlation matrices of a set of links, all `M x M`.
#[derive(Debug, Clone)]
pub struct CorrelationMatrixSet {
    pub matrices: Vec<CMatrix>,
}

impl CorrelationMatrixSet {
    pub fn new(matrices: Vec<CMatrix>) -> Result<Self> {
        let m = matrices.first().map_or(0, |r| r.nrows());
        if matrices.iter().any(|r| r.nrows() != m || r.ncols() != m) {
            return Err(invalid(
                "correlation matrices must all be M x M with the same M",
            ));
        }
        Ok(CorrelationMatrixSet { matrices })
    }

    pub fn antennas(&self) -> usize {
        self.matrices.first().map_or(0, |r| r.nrows())
    }

    pub fn sqrt_factors(&self) -> Result<Vec<CMatrix>> {
        self.matrices.iter().map(sqrt_factor).collect()
    }
}

/// One channel realization per link, `g = R^{1/2} h`.
pub fn draw_channels<R: Rng + ?Sized>(
    set: &CorrelationMatrixSet,
    rng: &mut R,
) -> Result<Vec<CVector>> {
    let factors = set.sqrt_factors()?;
    Ok(draw_with_factors(&factors, rng))
}

pub fn draw_with_factors<R: Rng + ?Sized>(factors: &[CMatrix], rng: &mut R) -> Vec<CVector> {
    factors
        .iter()
        .map(|s| {
            let h = cn_vector(s.ncols(), rng);
            s * h
        })
        .collect()
}

/// Draws `sqrt(beta) * g` with `g` exponentially correlated (first row
/// `[1, r*, ...]`) through the AR(1) recursion, i.e. multiplication by the
/// Cholesky factor without forming it.
pub fn draw_exponential_into<R: Rng + ?Sized>(
    kappa: f64,
    phi: f64,
    beta: f64,
    out: &mut [Complex64],
    rng: &mut R,
) {
    let r = Complex64::from_polar(kappa, phi);
    let innov = (1.0 - kappa * kappa).max(0.0).sqrt();
    let scale = beta.sqrt();
    let mut prev = cn01(rng);
    for (n, slot) in out.iter_mut().enumerate() {
        if n > 0 {
            prev = r * prev + cn01(rng) * innov;
        }
        *slot = prev * scale;
    }
}

/// MMSE estimation statistics for the channel between a BS and one of its
/// own users, given the correlation matrices of all pilot-sharing users.
#[derive(Debug, Clone)]
pub struct MmseStats {
    /// Covariance of the estimate.
    pub est_cov: CMatrix,
    /// Covariance of the estimation error; `est_cov + err_cov = R_own`.
    pub err_cov: CMatrix,
    /// `sqrt(rho_p) * R_own * (sum_l rho_p R_l + I)^{-1}`, applied to the
    /// pilot observation.
    pub filter: CMatrix,
}

fn pilot_covariance(r_all: &[CMatrix], rho_p: f64) -> Result<CMatrix> {
    let m = r_all
        .first()
        .map(|r| r.nrows())
        .ok_or_else(|| invalid("no correlation matrices"))?;
    if r_all.iter().any(|r| r.nrows() != m || r.ncols() != m) {
        return Err(invalid("correlation matrices have mismatched dimensions"));
    }
    let mut q = CMatrix::identity(m, m);
    for r in r_all {
        q += r * Complex64::from(rho_p);
    }
    Ok(q)
}

/// Filter `sqrt(rho_p) R_target Q^{-1}` for any target link sharing the
/// observation.
pub fn mmse_filter(r_all: &[CMatrix], target: usize, rho_p: f64) -> Result<CMatrix> {
    if target >= r_all.len() {
        return Err(invalid(format!("target index {target} out of range")));
    }
    let q = pilot_covariance(r_all, rho_p)?;
    let x = hermitian_cholesky(&q, 0.0)
        .and_then(|l| cholesky_solve(&l, &r_all[target]))
        .ok_or_else(|| Error::Decomposition("pilot covariance not positive definite".into()))?;
    // Q and R are Hermitian, so R Q^{-1} = (Q^{-1} R)^H
    Ok(x.adjoint() * Complex64::from(rho_p.sqrt()))
}

pub fn estimate_stats_correlated(r_all: &[CMatrix], own: usize, rho_p: f64) -> Result<MmseStats> {
    if own >= r_all.len() {
        return Err(invalid(format!("own index {own} out of range")));
    }
    if rho_p < 0.0 {
        return Err(invalid("pilot SNR must be nonnegative"));
    }
    let filter = mmse_filter(r_all, own, rho_p)?;
    let r_own = &r_all[own];
    let est = &filter * r_own * Complex64::from(rho_p.sqrt());
    let est_cov = (&est + est.adjoint()) * Complex64::from(0.5);
    let err_cov = r_own - &est_cov;
    Ok(MmseStats {
        est_cov,
        err_cov,
        filter,
    })
}

/// `alpha_l = sqrt(rho_p) beta_l / (1 + rho_p sum beta)` for the links
/// sharing one pilot at one BS.
pub fn uncorrelated_alpha(betas: &[f64], rho_p: f64) -> Vec<f64> {
    let total: f64 = betas.iter().sum();
    let denom = 1.0 + rho_p * total;
    betas.iter().map(|b| rho_p.sqrt() * b / denom).collect()
}

/// Pilot observation `sum_l sqrt(rho_p) g_l + noise`.
pub fn pilot_observation(channels: &[CVector], noise: &CVector, rho_p: f64) -> CVector {
    let mut r = noise.clone();
    for g in channels {
        r.axpy(Complex64::from(rho_p.sqrt()), g, Complex64::from(1.0));
    }
    r
}

pub fn mmse_filter_apply(observation: &CVector, stats: &MmseStats) -> Result<CVector> {
    if observation.len() != stats.filter.ncols() {
        return Err(invalid(format!(
            "observation length {} does not match M = {}",
            observation.len(),
            stats.filter.ncols()
        )));
    }
    Ok(&stats.filter * observation)
}

/// Estimate of a pilot-sharing link from the own-link estimate:
/// `R_cross R_own^{-1} ghat_own`.
pub fn cross_estimate_ratio(
    r_cross: &CMatrix,
    r_own: &CMatrix,
    ghat_own: &CVector,
) -> Result<CVector> {
    if r_cross.shape() != r_own.shape() || ghat_own.len() != r_own.nrows() {
        return Err(invalid("dimension mismatch in cross estimate"));
    }
    let rhs = CMatrix::from_column_slice(ghat_own.len(), 1, ghat_own.as_slice());
    let y = hermitian_cholesky(r_own, 1e-12)
        .and_then(|l| cholesky_solve(&l, &rhs))
        .ok_or_else(|| {
            Error::SingularMatrix("own-link correlation matrix is not invertible".into())
        })?;
    Ok(r_cross * y.column(0))
}
