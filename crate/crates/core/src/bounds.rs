//! Precoders, power normalization and worst-case-noise rate bounds.
//!
//! A [`GainTable`] describes one pilot-sharing interference channel (one
//! user per cell, all using the same pilot): `signal_power[l][j]` is the
//! effective power of BS `j`'s coherent signal at the user of cell `l`, and
//! `noise_equiv[l]` collects unit noise plus all non-coherent interference.
//! Every bound in the crate is `C(numerator / (noise_equiv + leftover))`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    cholesky_solve, cn01, cn_vector, draw_exponential_into, hermitian_cholesky, CMatrix, CVector,
    CorrelationSpec,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::FadingTensor;
use crate::regions::{CellSet, Layer, LayerSet};

/// `log2(1 + x)`.
#[inline]
pub fn cap(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    Zf,
    Rzf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecoderSpec {
    pub kind: PrecoderKind,
    /// RZF regularization; `None` means `K / rho_dl`.
    #[serde(default)]
    pub delta: Option<f64>,
}

impl PrecoderSpec {
    pub fn zf() -> Self {
        PrecoderSpec {
            kind: PrecoderKind::Zf,
            delta: None,
        }
    }

    pub fn rzf(delta: Option<f64>) -> Self {
        PrecoderSpec {
            kind: PrecoderKind::Rzf,
            delta,
        }
    }

    pub fn apply(&self, ghat: &CMatrix, rho_dl: f64) -> Result<CMatrix> {
        match self.kind {
            PrecoderKind::Zf => zf_precoder(ghat),
            PrecoderKind::Rzf => {
                let delta = self.delta.unwrap_or(ghat.ncols() as f64 / rho_dl);
                rzf_precoder(ghat, delta)
            }
        }
    }
}

/// `W = G (G^H G)^{-1}`.
pub fn zf_precoder(ghat: &CMatrix) -> Result<CMatrix> {
    let (m, k) = ghat.shape();
    if k > m {
        return Err(Error::SingularMatrix(format!(
            "ZF needs M >= K, got M={m}, K={k}"
        )));
    }
    let gram = ghat.adjoint() * ghat;
    let l = hermitian_cholesky(&gram, 1e-13).ok_or_else(|| {
        Error::SingularMatrix("estimated channel matrix is rank deficient".into())
    })?;
    // W^H = (G^H G)^{-1} G^H
    let wh = cholesky_solve(&l, &ghat.adjoint()).ok_or_else(|| {
        Error::SingularMatrix("estimated channel matrix is rank deficient".into())
    })?;
    Ok(wh.adjoint())
}

/// `W = G (G^H G + delta I)^{-1}`.
pub fn rzf_precoder(ghat: &CMatrix, delta: f64) -> Result<CMatrix> {
    if !(delta > 0.0) {
        return Err(invalid(format!(
            "RZF regularization must be positive, got {delta}"
        )));
    }
    let k = ghat.ncols();
    let gram = ghat.adjoint() * ghat + CMatrix::identity(k, k) * Complex64::from(delta);
    let l = hermitian_cholesky(&gram, 0.0).ok_or_else(|| {
        Error::Decomposition("regularized Gram matrix not positive definite".into())
    })?;
    let wh = cholesky_solve(&l, &ghat.adjoint()).ok_or_else(|| {
        Error::Decomposition("regularized Gram matrix not positive definite".into())
    })?;
    Ok(wh.adjoint())
}

/// Empirical mean of `tr(W^H W) / K`.
pub fn normalization_lambda_mc(precoders: &[CMatrix]) -> Result<f64> {
    if precoders.is_empty() {
        return Err(invalid("need at least one precoder sample"));
    }
    let sum: f64 = precoders
        .iter()
        .map(|w| w.iter().map(|z| z.norm_sqr()).sum::<f64>() / w.ncols() as f64)
        .sum();
    Ok(sum / precoders.len() as f64)
}

/// Uncorrelated-fading estimation coefficients for the whole network.
#[derive(Debug, Clone)]
struct ZfClosed {
    l: usize,
    k: usize,
    /// `alpha_jkl`, indexed like the fading tensor
    alpha: Vec<f64>,
    /// `sqrt(rho_p) beta_jkj alpha_jkj`, indexed `j * K + k`
    gamma: Vec<f64>,
}

impl ZfClosed {
    fn new(beta: &FadingTensor, rho_p: f64) -> Result<Self> {
        if !(rho_p > 0.0) {
            return Err(invalid("pilot SNR must be positive for ZF"));
        }
        let (l, k) = (beta.num_cells(), beta.users_per_cell());
        let mut alpha = vec![0.0; l * k * l];
        let mut gamma = vec![0.0; l * k];
        for j in 0..l {
            for kk in 0..k {
                let total: f64 = (0..l).map(|c| beta.get(j, kk, c)).sum();
                let denom = 1.0 + rho_p * total;
                for c in 0..l {
                    alpha[(j * k + kk) * l + c] = rho_p.sqrt() * beta.get(j, kk, c) / denom;
                }
                gamma[j * k + kk] = rho_p.sqrt() * beta.get(j, kk, j) * alpha[(j * k + kk) * l + j];
            }
        }
        Ok(ZfClosed { l, k, alpha, gamma })
    }

    fn inv_gamma_sum(&self, j: usize) -> f64 {
        (0..self.k)
            .map(|kk| 1.0 / self.gamma[j * self.k + kk])
            .sum()
    }
}

fn check_zf_dims(m: usize, k: usize) -> Result<()> {
    if m <= k {
        return Err(invalid(format!(
            "closed-form ZF needs M > K, got M={m}, K={k}"
        )));
    }
    Ok(())
}

/// `lambda_j = 1/(K(M-K)) sum_k 1/(sqrt(rho_p) beta_jkj alpha_jkj)` per cell.
pub fn lambda_zf_closed(beta: &FadingTensor, rho_p: f64, m: usize) -> Result<Vec<f64>> {
    let k = beta.users_per_cell();
    check_zf_dims(m, k)?;
    let zc = ZfClosed::new(beta, rho_p)?;
    let scale = 1.0 / (k as f64 * (m - k) as f64);
    Ok((0..zc.l).map(|j| scale * zc.inv_gamma_sum(j)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub pilot: usize,
    /// `signal_power[l][j]`: coherent power of BS `j`'s signal at receiver `l`.
    pub signal_power: Vec<Vec<f64>>,
    pub noise_equiv: Vec<f64>,
    pub rho_dl: f64,
    pub lambda: Vec<f64>,
}

impl GainTable {
    pub fn num_cells(&self) -> usize {
        self.noise_equiv.len()
    }

    /// Builds a table directly from powers, with `lambda = 1`.
    pub fn from_powers(signal_power: Vec<Vec<f64>>, noise_equiv: Vec<f64>) -> Result<Self> {
        let l = noise_equiv.len();
        if l == 0 || signal_power.len() != l || signal_power.iter().any(|row| row.len() != l) {
            return Err(invalid("gain table must be L x L with L noise entries"));
        }
        if signal_power
            .iter()
            .flatten()
            .chain(&noise_equiv)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(invalid("gain table entries must be finite and nonnegative"));
        }
        Ok(GainTable {
            pilot: 0,
            signal_power,
            noise_equiv,
            rho_dl: 1.0,
            lambda: vec![1.0; l],
        })
    }

    pub fn layered(&self, mu: f64) -> Result<LayeredGainTable> {
        LayeredGainTable::new(self.clone(), mu)
    }
}

/// Closed-form ZF gain tables for every pilot index.
pub fn gain_tables_closed_zf(
    beta: &FadingTensor,
    rho_p: f64,
    rho_dl: f64,
    m: usize,
) -> Result<Vec<GainTable>> {
    let (l, k) = (beta.num_cells(), beta.users_per_cell());
    check_zf_dims(m, k)?;
    let zc = ZfClosed::new(beta, rho_p)?;
    let mk = (m - k) as f64;
    let lambda: Vec<f64> = (0..l)
        .map(|j| zc.inv_gamma_sum(j) / (k as f64 * mk))
        .collect();
    // sum_k 1 / ((M-K) gamma_jk), the mean precoder power of BS j
    let wpow: Vec<f64> = (0..l).map(|j| zc.inv_gamma_sum(j) / mk).collect();
    let mut tables = Vec::with_capacity(k);
    for i in 0..k {
        let mut signal_power = vec![vec![0.0; l]; l];
        let mut noise_equiv = vec![1.0; l];
        for rx in 0..l {
            for j in 0..l {
                let ratio = beta.get(j, i, rx) / beta.get(j, i, j);
                signal_power[rx][j] = rho_dl / lambda[j] * ratio * ratio;
                let b = beta.get(j, i, rx);
                let err = b - rho_p.sqrt() * b * zc.alpha[(j * k + i) * l + rx];
                noise_equiv[rx] += rho_dl / lambda[j] * err * wpow[j];
            }
        }
        tables.push(GainTable {
            pilot: i,
            signal_power,
            noise_equiv,
            rho_dl,
            lambda: lambda.clone(),
        });
    }
    Ok(tables)
}

pub fn gain_table_closed_zf(
    beta: &FadingTensor,
    rho_p: f64,
    rho_dl: f64,
    m: usize,
    pilot: usize,
) -> Result<GainTable> {
    if pilot >= beta.users_per_cell() {
        return Err(invalid(format!("pilot index {pilot} out of range")));
    }
    Ok(gain_tables_closed_zf(beta, rho_p, rho_dl, m)?.swap_remove(pilot))
}

/// Correlation of every link in the network: `R_jkl` is `kind.matrix(phi_jkl,
/// M, beta_jkl)`.
#[derive(Debug, Clone)]
pub struct NetworkCorrelation {
    pub beta: FadingTensor,
    pub angles: Vec<f64>,
    pub kind: CorrelationSpec,
    pub antennas: usize,
}

impl NetworkCorrelation {
    pub fn new(
        beta: FadingTensor,
        angles: Vec<f64>,
        kind: CorrelationSpec,
        antennas: usize,
    ) -> Result<Self> {
        kind.validate()?;
        if angles.len() != beta.values().len() {
            return Err(invalid("one angle per link required"));
        }
        if antennas == 0 {
            return Err(invalid("antenna count must be at least 1"));
        }
        Ok(NetworkCorrelation {
            beta,
            angles,
            kind,
            antennas,
        })
    }

    pub fn uncorrelated(beta: FadingTensor, antennas: usize) -> Result<Self> {
        let n = beta.values().len();
        Self::new(beta, vec![0.0; n], CorrelationSpec::Uncorrelated, antennas)
    }

    fn index(&self, j: usize, k: usize, l: usize) -> usize {
        (j * self.beta.users_per_cell() + k) * self.beta.num_cells() + l
    }

    pub fn matrix(&self, j: usize, k: usize, l: usize) -> Result<CMatrix> {
        self.kind.matrix(
            self.angles[self.index(j, k, l)],
            self.antennas,
            self.beta.get(j, k, l),
        )
    }

    fn draw_into<R: Rng + ?Sized>(
        &self,
        j: usize,
        k: usize,
        l: usize,
        out: &mut [Complex64],
        rng: &mut R,
    ) {
        let beta = self.beta.get(j, k, l);
        match self.kind {
            CorrelationSpec::Uncorrelated => {
                let s = beta.sqrt();
                for z in out.iter_mut() {
                    *z = cn01(rng) * s;
                }
            }
            CorrelationSpec::Exponential { kappa } => {
                draw_exponential_into(kappa, self.angles[self.index(j, k, l)], beta, out, rng)
            }
        }
    }
}

/// Maps the pilot observation of one (BS, pilot) pair to the MMSE estimate
/// of the own-cell channel.
enum Estimator {
    Scalar(f64),
    Matrix {
        chol_q: CMatrix,
        r_own: CMatrix,
        sqrt_rho_p: f64,
    },
}

impl Estimator {
    fn build(net: &NetworkCorrelation, j: usize, k: usize, rho_p: f64) -> Result<Self> {
        let l = net.beta.num_cells();
        match net.kind {
            CorrelationSpec::Uncorrelated => {
                let betas: Vec<f64> = (0..l).map(|c| net.beta.get(j, k, c)).collect();
                Ok(Estimator::Scalar(
                    crate::channel::uncorrelated_alpha(&betas, rho_p)[j],
                ))
            }
            CorrelationSpec::Exponential { .. } => {
                let m = net.antennas;
                let mut q = CMatrix::identity(m, m);
                let mut r_own = None;
                for c in 0..l {
                    let r = net.matrix(j, k, c)?;
                    q += &r * Complex64::from(rho_p);
                    if c == j {
                        r_own = Some(r);
                    }
                }
                let chol_q = hermitian_cholesky(&q, 0.0).ok_or_else(|| {
                    Error::Decomposition("pilot covariance not positive definite".into())
                })?;
                Ok(Estimator::Matrix {
                    chol_q,
                    r_own: r_own.expect("own cell in range"),
                    sqrt_rho_p: rho_p.sqrt(),
                })
            }
        }
    }

    fn apply(&self, obs: &CVector) -> CVector {
        match self {
            Estimator::Scalar(a) => obs * Complex64::from(*a),
            Estimator::Matrix {
                chol_q,
                r_own,
                sqrt_rho_p,
            } => {
                let y = chol_q.solve_lower_triangular(obs).expect("nonzero pivots");
                let x = chol_q
                    .ad_solve_lower_triangular(&y)
                    .expect("nonzero pivots");
                r_own * x * Complex64::from(*sqrt_rho_p)
            }
        }
    }
}

/// Monte Carlo gain tables for every pilot index.
///
/// `signal_power[l][j] = (rho_dl/lambda_j) |E[g_jil^H w_jij]|^2` and
/// `noise_equiv[l] = 1 + sum_j (rho_dl/lambda_j) sum_k E|g_jil^H w_jkj|^2 - sum_j signal_power[l][j]`,
/// with `lambda_j` the sample mean of `tr(W_j^H W_j)/K` over the same draws.
pub fn gain_tables_mc<R: Rng + ?Sized>(
    net: &NetworkCorrelation,
    precoder: PrecoderSpec,
    rho_p: f64,
    rho_dl: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<GainTable>> {
    if samples == 0 {
        return Err(invalid("need at least one channel sample"));
    }
    let (l, k, m) = (
        net.beta.num_cells(),
        net.beta.users_per_cell(),
        net.antennas,
    );
    let estimators: Vec<Estimator> = (0..l * k)
        .map(|idx| Estimator::build(net, idx / k, idx % k, rho_p))
        .collect::<Result<_>>()?;

    // accumulators indexed [j][i * L + rx]
    let mut coherent = vec![vec![Complex64::new(0.0, 0.0); k * l]; l];
    let mut total = vec![vec![0.0f64; k * l]; l];
    let mut trace = vec![0.0f64; l];

    // columns ordered (user i, cell c) -> i * L + c
    let mut g_all = CMatrix::zeros(m, k * l);
    let mut ghat = CMatrix::zeros(m, k);
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for _ in 0..samples {
        for j in 0..l {
            for i in 0..k {
                for c in 0..l {
                    net.draw_into(j, i, c, &mut col, rng);
                    g_all.column_mut(i * l + c).copy_from_slice(&col);
                }
                let mut obs = cn_vector(m, rng);
                for c in 0..l {
                    obs.axpy(
                        Complex64::from(rho_p.sqrt()),
                        &g_all.column(i * l + c),
                        Complex64::from(1.0),
                    );
                }
                ghat.set_column(i, &estimators[j * k + i].apply(&obs));
            }
            let w = precoder.apply(&ghat, rho_dl)?;
            trace[j] += w.iter().map(|z| z.norm_sqr()).sum::<f64>() / k as f64;
            // (W^H G)[kk][col] = w_kk^H g_col = conj(g_col^H w_kk)
            let proj: DMatrix<Complex64> = w.adjoint() * &g_all;
            for i in 0..k {
                for rx in 0..l {
                    let c = i * l + rx;
                    coherent[j][c] += proj[(i, c)].conj();
                    total[j][c] += proj.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
            }
        }
    }

    let n = samples as f64;
    let lambda: Vec<f64> = trace.iter().map(|t| t / n).collect();
    let mut tables = Vec::with_capacity(k);
    for i in 0..k {
        let mut signal_power = vec![vec![0.0; l]; l];
        let mut noise_equiv = vec![1.0; l];
        for rx in 0..l {
            for j in 0..l {
                let c = i * l + rx;
                let scale = if lambda[j] > 0.0 {
                    rho_dl / lambda[j]
                } else {
                    0.0
                };
                let mean = coherent[j][c] / n;
                let sig = scale * mean.norm_sqr();
                signal_power[rx][j] = sig;
                noise_equiv[rx] += scale * total[j][c] / n - sig;
            }
        }
        tables.push(GainTable {
            pilot: i,
            signal_power,
            noise_equiv,
            rho_dl,
            lambda: lambda.clone(),
        });
    }
    Ok(tables)
}

pub fn gain_table_mc<R: Rng + ?Sized>(
    net: &NetworkCorrelation,
    precoder: PrecoderSpec,
    rho_p: f64,
    rho_dl: f64,
    samples: usize,
    pilot: usize,
    rng: &mut R,
) -> Result<GainTable> {
    if pilot >= net.beta.users_per_cell() {
        return Err(invalid(format!("pilot index {pilot} out of range")));
    }
    Ok(gain_tables_mc(net, precoder, rho_p, rho_dl, samples, rng)?.swap_remove(pilot))
}

/// `C(sum_{j in omega} P[l][j] / (N_l + sum_{j not in omega_all} P[l][j]))`,
/// where `omega_all` is the decode set.
pub fn bound_value(
    table: &GainTable,
    receiver: usize,
    decode: CellSet,
    omega: CellSet,
) -> Result<f64> {
    let l = table.num_cells();
    if receiver >= l || !decode.contains(receiver) {
        return Err(invalid(format!(
            "receiver {receiver} must belong to its decode set"
        )));
    }
    if !omega.is_subset(decode) || !decode.is_subset(CellSet::all(l)) {
        return Err(invalid("omega must be a subset of the decode set"));
    }
    let row = &table.signal_power[receiver];
    let num: f64 = omega.iter().map(|j| row[j]).sum();
    let leftover: f64 = (0..l)
        .filter(|&j| !decode.contains(j))
        .map(|j| row[j])
        .sum();
    Ok(cap(num / (table.noise_equiv[receiver] + leftover)))
}

/// Gain table whose signals are split into an outer layer with power
/// fraction `mu` and an inner layer with the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGainTable {
    pub base: GainTable,
    pub mu: f64,
}

impl LayeredGainTable {
    pub fn new(base: GainTable, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(invalid(format!("power split {mu} outside [0, 1]")));
        }
        Ok(LayeredGainTable { base, mu })
    }

    pub fn num_cells(&self) -> usize {
        self.base.num_cells()
    }

    pub fn outer(&self, receiver: usize, cell: usize) -> f64 {
        self.mu * self.base.signal_power[receiver][cell]
    }

    pub fn inner(&self, receiver: usize, cell: usize) -> f64 {
        (1.0 - self.mu) * self.base.signal_power[receiver][cell]
    }

    pub fn layer_power(&self, receiver: usize, cell: usize, layer: Layer) -> f64 {
        match layer {
            Layer::A => self.outer(receiver, cell),
            Layer::B => self.inner(receiver, cell),
        }
    }
}

/// Layers in `decoded` form the numerator, layers in `conditioned` are
/// removed, and every remaining layer of every cell is noise.
pub fn layered_bound_value(
    table: &LayeredGainTable,
    receiver: usize,
    decoded: LayerSet,
    conditioned: LayerSet,
) -> Result<f64> {
    let l = table.num_cells();
    if receiver >= l {
        return Err(invalid(format!("receiver {receiver} out of range")));
    }
    if !decoded.is_disjoint(conditioned) {
        return Err(invalid("decoded and conditioned layer sets overlap"));
    }
    let all = LayerSet::all(l);
    if !decoded.union(conditioned).is_subset(all) {
        return Err(invalid("layer set references a cell out of range"));
    }
    let num: f64 = decoded
        .iter()
        .map(|id| table.layer_power(receiver, id.cell, id.layer))
        .sum();
    let noise: f64 = all
        .difference(decoded.union(conditioned))
        .iter()
        .map(|id| table.layer_power(receiver, id.cell, id.layer))
        .sum();
    Ok(cap(num / (table.base.noise_equiv[receiver] + noise)))
}
