//! Uplink data reception: P-MMSE combining, instantaneous SINR, and
//! achievable spectral efficiency.
//!
//! Every product involving the serving masks runs on the reduced antenna
//! subspace of the target UE (dimension N * |serving set|); the full
//! L*N-dimensional mask is never formed. Work per UE is bounded by its
//! partner count and serving-set size, not by K or L.

use nalgebra::Cholesky;
use rand::Rng;
use serde::Serialize;

use crate::channel::ChannelRealization;
use crate::estimation::{Estimates, MethodEstimator};
use crate::linalg::{sample_cn_vector, C64, CMat, CVec};
use crate::scenario::ScenarioConfig;
use crate::selection::ServingMap;

/// Per-UE, per-drop outcome row.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub ue: usize,
    pub nmse: f64,
    pub se: f64,
    pub served: bool,
    pub n_serving_sas: usize,
}

/// Stack one UE's per-subarray estimate blocks at the given subarrays.
fn stacked_estimate(est: &Estimates, ue: usize, sas: &[usize], n: usize) -> CVec {
    let mut out = CVec::zeros(n * sas.len());
    for (slot, &sa) in sas.iter().enumerate() {
        out.rows_mut(slot * n, n).copy_from(est.vector(ue, sa));
    }
    out
}

/// Stack one UE's true channel blocks at the given subarrays.
pub fn stacked_channel(real: &ChannelRealization, ue: usize, sas: &[usize], n: usize) -> CVec {
    let mut out = CVec::zeros(n * sas.len());
    for (slot, &sa) in sas.iter().enumerate() {
        out.rows_mut(slot * n, n).copy_from(real.vector(ue, sa));
    }
    out
}

/// P-MMSE receive combiner for one UE on its reduced antenna subspace:
/// v = p (sum_{i in partners} p (h_i h_i^H + C_i) + sigma^2 I)^-1 h_k,
/// all matrices restricted to the UE's serving antennas. `None` when the UE
/// is unserved.
pub fn pmmse_combiner(
    est: &Estimates,
    estimator: &MethodEstimator,
    map: &ServingMap,
    cfg: &ScenarioConfig,
    ue: usize,
) -> Option<CVec> {
    let sas = map.serving_sas(ue);
    if sas.is_empty() {
        return None;
    }
    let n = cfg.n;
    let dim = n * sas.len();
    let p = C64::new(cfg.ue_power, 0.0);
    let mut a = CMat::identity(dim, dim) * C64::new(cfg.noise_power, 0.0);
    for &partner in map.partners(ue) {
        let h = stacked_estimate(est, partner, sas, n);
        a.gerc(p, &h, &h, C64::new(1.0, 0.0));
        for (slot, &sa) in sas.iter().enumerate() {
            let c = estimator.error_covariance(partner, sa);
            let offset = slot * n;
            for row in 0..n {
                for col in 0..n {
                    a[(offset + row, offset + col)] += c[(row, col)] * cfg.ue_power;
                }
            }
        }
    }
    let chol = Cholesky::new(a).expect("positive noise keeps the Gram matrix definite");
    let target = stacked_estimate(est, ue, sas, n);
    Some(chol.solve(&target) * p)
}

/// Combiners for all UEs in one realization.
pub fn combiners(
    est: &Estimates,
    estimator: &MethodEstimator,
    map: &ServingMap,
    cfg: &ScenarioConfig,
) -> Vec<Option<CVec>> {
    (0..map.k())
        .map(|ue| pmmse_combiner(est, estimator, map, cfg, ue))
        .collect()
}

/// Instantaneous effective uplink SINR of one UE given its combiner.
///
/// The interference sum runs over all K UEs; the error term stacks every
/// UE's error covariance restricted to the serving antennas. Unserved UEs
/// get SINR zero by convention.
pub fn sinr_ul(
    est: &Estimates,
    estimator: &MethodEstimator,
    map: &ServingMap,
    combiner: Option<&CVec>,
    cfg: &ScenarioConfig,
    ue: usize,
) -> f64 {
    let Some(v) = combiner else {
        return 0.0;
    };
    let sas = map.serving_sas(ue);
    if sas.is_empty() || v.norm_squared() == 0.0 {
        return 0.0;
    }
    let n = cfg.n;
    let p = cfg.ue_power;

    let desired = v.dotc(&stacked_estimate(est, ue, sas, n));
    let numerator = p * desired.norm_sqr();

    let mut interference = 0.0;
    for other in 0..est.k {
        if other == ue {
            continue;
        }
        let cross = v.dotc(&stacked_estimate(est, other, sas, n));
        interference += p * cross.norm_sqr();
    }

    // v^H Z v with Z the power-weighted stack of error covariances
    let mut error_term = 0.0;
    for other in 0..est.k {
        for (slot, &sa) in sas.iter().enumerate() {
            let c = estimator.error_covariance(other, sa);
            let block = v.rows(slot * n, n);
            let mut quad = C64::new(0.0, 0.0);
            for row in 0..n {
                for col in 0..n {
                    quad += block[row].conj() * c[(row, col)] * block[col];
                }
            }
            error_term += p * quad.re;
        }
    }

    let noise = cfg.noise_power * v.norm_squared();
    numerator / (interference + error_term + noise)
}

/// Achievable SE from per-realization SINR samples:
/// (tau_u / tau_c) * mean log2(1 + SINR).
pub fn se_ul(sinr_samples: &[f64], cfg: &ScenarioConfig) -> f64 {
    if sinr_samples.is_empty() {
        return 0.0;
    }
    let mean: f64 = sinr_samples
        .iter()
        .map(|s| (1.0 + s).log2())
        .sum::<f64>()
        / sinr_samples.len() as f64;
    cfg.prelog() * mean
}

/// Received uplink data signal per subarray: y_l = sum_i h_il s_i + n_l.
pub fn synthesize_ul_signal<R: Rng>(
    real: &ChannelRealization,
    symbols: &[C64],
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Vec<CVec> {
    assert_eq!(symbols.len(), real.k);
    let noise_scale = C64::new(cfg.noise_power.sqrt(), 0.0);
    (0..real.l)
        .map(|sa| {
            let mut y = sample_cn_vector(real.n, rng) * noise_scale;
            for (ue, &s) in symbols.iter().enumerate() {
                y.axpy(s, real.vector(ue, sa), C64::new(1.0, 0.0));
            }
            y
        })
        .collect()
}

/// Symbol estimate: the combiner applied to the received signal at the
/// serving subarrays.
pub fn estimate_symbol(
    ul_signal: &[CVec],
    combiner: Option<&CVec>,
    map: &ServingMap,
    n: usize,
    ue: usize,
) -> C64 {
    let Some(v) = combiner else {
        return C64::new(0.0, 0.0);
    };
    let mut s_hat = C64::new(0.0, 0.0);
    for (slot, &sa) in map.serving_sas(ue).iter().enumerate() {
        s_hat += v.rows(slot * n, n).dotc(&ul_signal[sa]);
    }
    s_hat
}
