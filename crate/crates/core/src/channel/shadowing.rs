//! Spatially correlated log-normal shadow fading.
//!
//! Shadow values live in the dB domain: the field F over all K*L links is
//! jointly Gaussian with a distance-profiled variance and cross-correlations
//! driven by UE-UE, SA-SA, and cross-link distances. The linear multiplier
//! is 10^(F/10).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ChannelError;
use crate::scenario::{LinkTable, Topology};

/// Marginal variance of the dB-domain shadow value at link distance `d`:
/// grows from zero at the array towards sigma^2 beyond the decorrelation
/// distance.
pub fn shadow_variance(distance: f64, decorr_distance: f64, sigma_db: f64) -> f64 {
    let profile = 1.0 - (-distance / decorr_distance).exp();
    sigma_db * sigma_db * profile * profile
}

/// Cross-covariance matrix of the dB shadow field over all K*L links,
/// ordered UE-major (row k*L + l). The diagonal reduces algebraically to
/// `shadow_variance`.
pub fn shadow_cross_covariance(
    topo: &Topology,
    links: &LinkTable,
    decorr_distance: f64,
    sigma_db: f64,
) -> DMatrix<f64> {
    let k = links.k;
    let l = links.l;
    let dim = k * l;
    let inv_delta = 1.0 / decorr_distance;

    // e^{-d/delta} per link, per UE pair, per SA pair
    let link_exp: Vec<f64> = (0..k)
        .flat_map(|ue| (0..l).map(move |sa| (ue, sa)))
        .map(|(ue, sa)| (-links.get(ue, sa).distance * inv_delta).exp())
        .collect();
    let dist3 = |a: &[f64; 3], b: &[f64; 3]| {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let ue_exp = DMatrix::from_fn(k, k, |a, b| {
        (-dist3(&topo.ue_positions[a], &topo.ue_positions[b]) * inv_delta).exp()
    });
    let sa_exp = DMatrix::from_fn(l, l, |a, b| {
        (-dist3(&topo.sa_positions[a], &topo.sa_positions[b]) * inv_delta).exp()
    });

    let half_var = 0.5 * sigma_db * sigma_db;
    let mut cov = DMatrix::zeros(dim, dim);
    for row in 0..dim {
        let (uk, sl) = (row / l, row % l);
        for col in row..dim {
            let (ui, sj) = (col / l, col % l);
            let e_kl = link_exp[row];
            let e_ij = link_exp[col];
            let shape = (1.0 - e_kl) * (1.0 - e_ij) / ((1.0 + e_kl) * (1.0 + e_ij)).sqrt();
            let proximity = link_exp[uk * l + sj]
                + link_exp[ui * l + sl]
                + ue_exp[(uk, ui)]
                + sa_exp[(sl, sj)];
            let value = half_var * shape * proximity;
            cov[(row, col)] = value;
            cov[(col, row)] = value;
        }
    }
    cov
}

/// Cholesky factor of a shadow covariance, with escalating diagonal jitter
/// when the assembled matrix is numerically indefinite.
pub struct ShadowFactor {
    factor: DMatrix<f64>,
    jitter: Option<f64>,
}

impl ShadowFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self, ChannelError> {
        let dim = cov.nrows();
        let max_diag = (0..dim).map(|i| cov[(i, i)]).fold(0.0, f64::max);
        if max_diag <= 0.0 {
            // all-zero field (e.g. every link at the array): nothing to draw
            return Ok(Self {
                factor: DMatrix::zeros(dim, dim),
                jitter: None,
            });
        }
        if let Some(chol) = nalgebra::Cholesky::new(cov.clone()) {
            return Ok(Self {
                factor: chol.unpack(),
                jitter: None,
            });
        }
        let mut eps = 1e-10 * max_diag;
        for _ in 0..3 {
            let mut jittered = cov.clone();
            for i in 0..dim {
                jittered[(i, i)] += eps;
            }
            if let Some(chol) = nalgebra::Cholesky::new(jittered) {
                return Ok(Self {
                    factor: chol.unpack(),
                    jitter: Some(eps),
                });
            }
            eps *= 10.0;
        }
        Err(ChannelError::ShadowFactorization { jitter: eps / 10.0 })
    }

    /// Jitter that had to be added, if any; worth a warning upstream.
    pub fn jitter(&self) -> Option<f64> {
        self.jitter
    }

    /// Draw the dB field, optionally rescaled by `scale` (covariance scales
    /// by `scale^2`, so a unit-sigma factor serves every component type).
    pub fn sample_scaled<R: Rng>(&self, scale: f64, rng: &mut R) -> DVector<f64> {
        let dim = self.factor.nrows();
        let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let mut field = &self.factor * z;
        field *= scale;
        field
    }
}

/// dB-domain shadow values for every link, UE-major.
#[derive(Debug, Clone)]
pub struct ShadowField {
    pub db: DVector<f64>,
    l: usize,
}

impl ShadowField {
    pub fn new(db: DVector<f64>, l: usize) -> Self {
        Self { db, l }
    }

    pub fn db(&self, ue: usize, sa: usize) -> f64 {
        self.db[ue * self.l + sa]
    }

    /// Linear multiplier X = 10^(F/10).
    pub fn linear(&self, ue: usize, sa: usize) -> f64 {
        10f64.powf(self.db(ue, sa) / 10.0)
    }
}

/// Draw one jointly Gaussian dB shadow field from an assembled covariance.
pub fn sample_shadowing<R: Rng>(
    cov: &DMatrix<f64>,
    l: usize,
    rng: &mut R,
) -> Result<ShadowField, ChannelError> {
    let factor = ShadowFactor::new(cov)?;
    Ok(ShadowField::new(factor.sample_scaled(1.0, rng), l))
}
