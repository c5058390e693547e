use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratesplit::channel::{
    cn_vector, draw_with_factors, estimate_stats_correlated, exp_correlation_matrix,
    mmse_filter_apply, pilot_observation, sqrt_factor, CMatrix,
};

fn random_psd(m: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = DMatrix::from_fn(m, m, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let rank_deficient = rng.random_bool(0.2);
    let mut r = &a * a.adjoint();
    if rank_deficient {
        let v = a.column(0).into_owned();
        r = &v * v.adjoint();
    }
    r * Complex64::from(rng.random_range(0.1..3.0))
}

fn frob(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn estimate_and_error_split_the_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let m = rng.random_range(1..6);
        let l = rng.random_range(1..5);
        let rs: Vec<CMatrix> = (0..l).map(|_| random_psd(m, &mut rng)).collect();
        let rho_p = rng.random_range(0.0..20.0);
        let own = rng.random_range(0..l);
        let s = estimate_stats_correlated(&rs, own, rho_p).unwrap();
        let resid = &s.est_cov + &s.err_cov - &rs[own];
        assert!(frob(&resid) <= 1e-12 * frob(&rs[own]).max(1.0));
    }
}

/// Empirical second moments of the estimate and error at `M = 4`.
#[test]
fn empirical_estimate_covariance() {
    let m = 4;
    let rho_p = 2.0;
    let rs = vec![
        exp_correlation_matrix(0.5, 0.3, m, 1.0).unwrap(),
        exp_correlation_matrix(0.7, -1.1, m, 0.4).unwrap(),
        exp_correlation_matrix(0.2, 2.0, m, 0.1).unwrap(),
    ];
    let stats = estimate_stats_correlated(&rs, 0, rho_p).unwrap();
    let factors: Vec<CMatrix> = rs.iter().map(|r| sqrt_factor(r).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut est = CMatrix::zeros(m, m);
    let mut cross = CMatrix::zeros(m, m);
    for _ in 0..n {
        let g = draw_with_factors(&factors, &mut rng);
        let y = pilot_observation(&g, &cn_vector(m, &mut rng), rho_p);
        let ghat = mmse_filter_apply(&y, &stats).unwrap();
        let err = &g[0] - &ghat;
        est += &ghat * ghat.adjoint();
        cross += &ghat * err.adjoint();
    }
    est /= Complex64::from(n as f64);
    cross /= Complex64::from(n as f64);
    let rel = frob(&(&est - &stats.est_cov)) / frob(&stats.est_cov);
    assert!(rel < 0.05, "estimate covariance off by {rel}");
    // orthogonality of estimate and error
    assert!(frob(&cross) < 0.02 * frob(&rs[0]), "{}", frob(&cross));
}
