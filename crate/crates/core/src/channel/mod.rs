//! Probabilistic LoS/NLoS channel model with correlated shadowing.
//!
//! Per statistics epoch (one Monte-Carlo drop) the model fixes a Bernoulli
//! LoS visibility mask and two correlated shadow fields, then derives
//! per-link first- and second-order statistics: the LoS mean vector, the
//! NLoS spatial correlation matrix, and the large-scale gains. Channel
//! realizations are drawn from the resulting complex Gaussian per coherence
//! block.

pub mod quadrature;
pub mod shadowing;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{hermitian_sqrt, sample_cn_vector, C64, CMat, CVec};
use crate::scenario::{LinkGeometry, LinkTable, ScenarioConfig};

pub use quadrature::CorrelationQuadrature;
pub use shadowing::{sample_shadowing, shadow_cross_covariance, shadow_variance, ShadowFactor, ShadowField};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("elevation too close to +/-pi/2 for the planar array response")]
    ElevationSingular,
    #[error("correlation quadrature did not converge (relative change {delta:.3e})")]
    QuadratureNotConverged { delta: f64 },
    #[error("shadow covariance not factorizable even with jitter {jitter:.3e}")]
    ShadowFactorization { jitter: f64 },
}

/// Distance-dependent LoS probability for the urban-micro layout:
/// certain LoS up to 18 m, exponential decay beyond.
pub fn los_probability(distance: f64) -> f64 {
    let decay = (-distance / 36.0).exp();
    ((18.0 / distance).min(1.0) * (1.0 - decay) + decay).clamp(0.0, 1.0)
}

/// Bernoulli LoS visibility per link, fixed for a whole statistics epoch.
#[derive(Debug, Clone)]
pub struct VisibilityMask {
    pub k: usize,
    pub l: usize,
    alpha: Vec<bool>,
}

impl VisibilityMask {
    pub fn from_alpha(k: usize, l: usize, alpha: Vec<bool>) -> Self {
        assert_eq!(alpha.len(), k * l);
        Self { k, l, alpha }
    }

    pub fn has_los(&self, ue: usize, sa: usize) -> bool {
        self.alpha[ue * self.l + sa]
    }

    /// Fraction of links with LoS.
    pub fn los_fraction(&self) -> f64 {
        let ones = self.alpha.iter().filter(|&&a| a).count();
        ones as f64 / self.alpha.len() as f64
    }
}

pub fn sample_visibility<R: Rng>(links: &LinkTable, rng: &mut R) -> VisibilityMask {
    let mut alpha = Vec::with_capacity(links.k * links.l);
    for ue in 0..links.k {
        for sa in 0..links.l {
            let p = los_probability(links.get(ue, sa).distance);
            alpha.push(rng.random_range(0.0..1.0) < p);
        }
    }
    VisibilityMask::from_alpha(links.k, links.l, alpha)
}

/// Uniform-linear-subarray response; entry n is
/// `exp(-j 2 (n-1) pi (d/lambda) sin(phi)/cos(theta))`.
pub fn array_response(
    phi: f64,
    theta: f64,
    n: usize,
    d_over_lambda: f64,
) -> Result<CVec, ChannelError> {
    let cos_theta = theta.cos();
    if cos_theta.abs() < 1e-9 {
        return Err(ChannelError::ElevationSingular);
    }
    let step = -2.0 * std::f64::consts::PI * d_over_lambda * phi.sin() / cos_theta;
    Ok(CVec::from_fn(n, |i, _| {
        let arg = step * i as f64;
        C64::new(arg.cos(), arg.sin())
    }))
}

/// LoS gain and channel vector for one link: inverse-square path loss with
/// shadowing, a carrier phase from the propagation distance, and the array
/// response of the LoS direction.
pub fn los_channel(
    geom: &LinkGeometry,
    x_los: f64,
    cfg: &ScenarioConfig,
) -> Result<(f64, CVec), ChannelError> {
    let beta_los = cfg.beta0 * x_los / (geom.distance * geom.distance);
    let a = array_response(
        geom.azimuth,
        geom.elevation,
        cfg.n,
        cfg.spacing_over_wavelength(),
    )?;
    let arg = -2.0 * std::f64::consts::PI * geom.distance / cfg.wavelength;
    let scale = C64::new(arg.cos(), arg.sin()) * beta_los.sqrt();
    Ok((beta_los, a * scale))
}

/// NLoS large-scale gain: beta0 * X / d^gamma.
pub fn nlos_lsf(geom: &LinkGeometry, x_nlos: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.beta0 * x_nlos / geom.distance.powf(cfg.gamma)
}

/// First- and second-order statistics of one UE-SA link.
#[derive(Debug, Clone)]
pub struct LinkStatistics {
    /// Mean vector: the LoS component when visible, zero otherwise.
    pub mean: CVec,
    /// NLoS spatial correlation matrix.
    pub cov: CMat,
    /// Cached factor S with S S^H = cov, for realization sampling.
    pub sqrt_factor: CMat,
    pub beta_los: f64,
    pub beta_nlos: f64,
    /// Combined gain: alpha * beta_los + beta_nlos.
    pub beta: f64,
}

/// Per-epoch statistics for every UE-SA link, UE-major.
#[derive(Debug, Clone)]
pub struct ChannelStatistics {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    pub links: Vec<LinkStatistics>,
    pub visibility: VisibilityMask,
}

impl ChannelStatistics {
    pub fn link(&self, ue: usize, sa: usize) -> &LinkStatistics {
        &self.links[ue * self.l + sa]
    }

    pub fn beta(&self, ue: usize, sa: usize) -> f64 {
        self.link(ue, sa).beta
    }

    pub fn beta_nlos(&self, ue: usize, sa: usize) -> f64 {
        self.link(ue, sa).beta_nlos
    }

    /// Sum of beta over subarrays for one UE.
    pub fn beta_sum(&self, ue: usize) -> f64 {
        (0..self.l).map(|sa| self.beta(ue, sa)).sum()
    }

    /// Order-insensitive digest of the gain tables; lets paired runs assert
    /// they consumed identical statistics.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0xcbf2_9ce4_8422_2325u64;
        for link in &self.links {
            for v in [link.beta_los, link.beta_nlos, link.beta] {
                acc = (acc ^ v.to_bits()).wrapping_mul(0x1000_0000_01b3);
            }
        }
        acc
    }
}

/// Build the full statistics table for one epoch.
pub fn channel_statistics(
    links: &LinkTable,
    visibility: &VisibilityMask,
    shadow_los: &ShadowField,
    shadow_nlos: &ShadowField,
    cfg: &ScenarioConfig,
    quad: &CorrelationQuadrature,
) -> Result<ChannelStatistics, ChannelError> {
    let k = links.k;
    let l = links.l;
    let stats: Result<Vec<LinkStatistics>, ChannelError> = (0..k * l)
        .into_par_iter()
        .map(|idx| {
            let (ue, sa) = (idx / l, idx % l);
            let geom = links.get(ue, sa);
            let has_los = visibility.has_los(ue, sa);
            let x_nlos = shadow_nlos.linear(ue, sa);
            let beta_nlos = nlos_lsf(geom, x_nlos, cfg);
            let cov = quad.correlation(
                beta_nlos,
                geom.azimuth,
                geom.elevation,
                cfg.sigma_phi,
                cfg.sigma_theta,
            )?;
            let sqrt_factor = hermitian_sqrt(&cov);
            let x_los = shadow_los.linear(ue, sa);
            let (beta_los, mean) = if has_los {
                los_channel(geom, x_los, cfg)?
            } else {
                // gain is still defined; the mean vector is zero without LoS
                (
                    cfg.beta0 * x_los / (geom.distance * geom.distance),
                    CVec::zeros(cfg.n),
                )
            };
            let alpha = if has_los { 1.0 } else { 0.0 };
            Ok(LinkStatistics {
                mean,
                cov,
                sqrt_factor,
                beta_los,
                beta_nlos,
                beta: alpha * beta_los + beta_nlos,
            })
        })
        .collect();
    Ok(ChannelStatistics {
        k,
        l,
        n: cfg.n,
        links: stats?,
        visibility: visibility.clone(),
    })
}

/// One coherence block's channel vectors for all UEs and subarrays.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    h: Vec<CVec>,
}

impl ChannelRealization {
    pub fn from_vectors(k: usize, l: usize, n: usize, h: Vec<CVec>) -> Self {
        assert_eq!(h.len(), k * l);
        Self { k, l, n, h }
    }

    pub fn vector(&self, ue: usize, sa: usize) -> &CVec {
        &self.h[ue * self.l + sa]
    }
}

/// Draw h = mean + S z with z standard complex Gaussian, independently per
/// link.
pub fn sample_channel<R: Rng>(stats: &ChannelStatistics, rng: &mut R) -> ChannelRealization {
    let mut h = Vec::with_capacity(stats.k * stats.l);
    for link in &stats.links {
        let z = sample_cn_vector(stats.n, rng);
        h.push(&link.mean + &link.sqrt_factor * z);
    }
    ChannelRealization {
        k: stats.k,
        l: stats.l,
        n: stats.n,
        h,
    }
}
