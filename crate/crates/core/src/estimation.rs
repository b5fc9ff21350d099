//! Pilot observations, MMSE channel estimation, and NMSE accounting.
//!
//! Observations are synthesized directly in despread form: one processed
//! N-vector per (pilot, subarray) pair, equal to the pilot-weighted sum of
//! the sharing UEs' channels plus noise of covariance tau_p sigma_n^2 I.
//! Because every (pilot, subarray) pair consumes the same number of draws in
//! the same order, assignments can be swapped while reusing one noise stream,
//! which keeps method comparisons paired.

use nalgebra::{Cholesky, Dyn};
use rand::Rng;
use thiserror::Error;

use crate::channel::{ChannelRealization, ChannelStatistics};
use crate::linalg::{hermitize, sample_cn_vector, C64, CMat, CVec};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("pilot {pilot} at subarray {sa}: Psi factorization failed")]
    PsiFactorization { pilot: usize, sa: usize },
}

/// Pilot index per UE plus the derived sharing groups. Pilot indices are
/// zero-based internally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotAssignment {
    tau_p: usize,
    pilots: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl PilotAssignment {
    pub fn new(pilots: Vec<usize>, tau_p: usize) -> Self {
        assert!(tau_p >= 1, "need at least one pilot");
        assert!(
            pilots.iter().all(|&t| t < tau_p),
            "pilot index out of range"
        );
        let mut groups = vec![Vec::new(); tau_p];
        for (ue, &t) in pilots.iter().enumerate() {
            groups[t].push(ue);
        }
        Self {
            tau_p,
            pilots,
            groups,
        }
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn k(&self) -> usize {
        self.pilots.len()
    }

    pub fn pilot(&self, ue: usize) -> usize {
        self.pilots[ue]
    }

    pub fn pilots(&self) -> &[usize] {
        &self.pilots
    }

    /// UEs assigned pilot `t`, ascending.
    pub fn group(&self, t: usize) -> &[usize] {
        &self.groups[t]
    }

    /// Pilot-sharing set of `ue`, itself included.
    pub fn sharing_set(&self, ue: usize) -> &[usize] {
        self.group(self.pilots[ue])
    }

    /// Pilots with at least one UE assigned.
    pub fn used_pilots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tau_p).filter(|&t| !self.groups[t].is_empty())
    }

    /// Relabel pilots into first-occurrence order. Sharing groups (and every
    /// group-dependent quantity) are unchanged; assignments with identical
    /// groups map to the same canonical form, which keeps paired method
    /// comparisons tie-exact under shared noise streams.
    pub fn canonicalized(&self) -> PilotAssignment {
        let mut relabel = vec![usize::MAX; self.tau_p];
        let mut next = 0;
        let pilots = self
            .pilots
            .iter()
            .map(|&t| {
                if relabel[t] == usize::MAX {
                    relabel[t] = next;
                    next += 1;
                }
                relabel[t]
            })
            .collect();
        PilotAssignment::new(pilots, self.tau_p)
    }
}

/// Processed pilot observations y for every (pilot, subarray) pair.
#[derive(Debug, Clone)]
pub struct PilotObservations {
    pub tau_p: usize,
    pub l: usize,
    y: Vec<CVec>,
}

impl PilotObservations {
    pub fn from_vectors(tau_p: usize, l: usize, y: Vec<CVec>) -> Self {
        assert_eq!(y.len(), tau_p * l);
        Self { tau_p, l, y }
    }

    pub fn vector(&self, pilot: usize, sa: usize) -> &CVec {
        &self.y[pilot * self.l + sa]
    }
}

/// Despread pilot observations for one coherence block:
/// `y[t, l] = sum_{i: t_i = t} sqrt(p) tau_p h_il + n`, n ~ CN(0, tau_p sigma^2 I).
///
/// Noise is drawn for every (pilot, subarray) pair in fixed order before the
/// signal part is added, so the draw sequence does not depend on the
/// assignment.
pub fn synthesize_pilot_observation<R: Rng>(
    realization: &ChannelRealization,
    assignment: &PilotAssignment,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> PilotObservations {
    let tau_p = assignment.tau_p();
    let noise_scale = (cfg.tau_p as f64 * cfg.noise_power).sqrt();
    let amp = cfg.ue_power.sqrt() * cfg.tau_p as f64;
    let mut y = Vec::with_capacity(tau_p * realization.l);
    for t in 0..tau_p {
        for sa in 0..realization.l {
            let mut v = sample_cn_vector(realization.n, rng) * C64::new(noise_scale, 0.0);
            for &ue in assignment.group(t) {
                v.axpy(C64::new(amp, 0.0), realization.vector(ue, sa), C64::new(1.0, 0.0));
            }
            y.push(v);
        }
    }
    PilotObservations {
        tau_p,
        l: realization.l,
        y,
    }
}

/// Observation covariance (scaled): Psi = sum_{i in group} p tau_p R_il + sigma^2 I.
fn psi_for_group(
    stats: &ChannelStatistics,
    group: &[usize],
    sa: usize,
    cfg: &ScenarioConfig,
) -> CMat {
    let mut psi = CMat::identity(stats.n, stats.n) * C64::new(cfg.noise_power, 0.0);
    let p_tau = cfg.ue_power * cfg.tau_p as f64;
    for &ue in group {
        psi += stats.link(ue, sa).cov.scale(p_tau);
    }
    psi
}

/// Mean of the processed observation: sum of sharers' scaled channel means.
fn y_bar_for_group(
    stats: &ChannelStatistics,
    group: &[usize],
    sa: usize,
    cfg: &ScenarioConfig,
) -> CVec {
    let amp = cfg.ue_power.sqrt() * cfg.tau_p as f64;
    let mut y_bar = CVec::zeros(stats.n);
    for &ue in group {
        y_bar.axpy(C64::new(amp, 0.0), &stats.link(ue, sa).mean, C64::new(1.0, 0.0));
    }
    y_bar
}

/// Psi matrix for one (pilot, subarray) pair.
pub fn psi_matrix(
    assignment: &PilotAssignment,
    stats: &ChannelStatistics,
    sa: usize,
    pilot: usize,
    cfg: &ScenarioConfig,
) -> CMat {
    psi_for_group(stats, assignment.group(pilot), sa, cfg)
}

/// Interference-plus-noise part of Psi as seen by `ue`:
/// M = sigma^2 I + p tau_p sum_{i in group, i != ue} R_il.
///
/// Summed directly rather than as Psi - p tau_p R to avoid cancellation;
/// the error covariance is then C = R Psi^-1 M with no subtraction at all,
/// which stays accurate at high SNR where R Psi^-1 R nearly equals R.
fn residual_psi(
    stats: &ChannelStatistics,
    group: &[usize],
    ue: usize,
    sa: usize,
    cfg: &ScenarioConfig,
) -> CMat {
    let mut m = CMat::identity(stats.n, stats.n) * C64::new(cfg.noise_power, 0.0);
    let p_tau = cfg.ue_power * cfg.tau_p as f64;
    for &i in group {
        if i != ue {
            m += stats.link(i, sa).cov.scale(p_tau);
        }
    }
    m
}

/// trace(C) for one link given the factorized Psi and the residual matrix M:
/// trace(R Psi^-1 M).
fn link_error_trace(chol: &Cholesky<C64, Dyn>, r: &CMat, m: &CMat) -> f64 {
    let s = chol.solve(m);
    let n = r.nrows();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            acc += (r[(a, b)] * s[(b, a)]).re;
        }
    }
    acc.max(0.0)
}

/// MMSE estimate of one link's channel from the despread observation.
pub fn mmse_estimate(
    obs: &PilotObservations,
    assignment: &PilotAssignment,
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    ue: usize,
    sa: usize,
) -> Result<CVec, EstimationError> {
    let pilot = assignment.pilot(ue);
    let group = assignment.group(pilot);
    let psi = psi_for_group(stats, group, sa, cfg);
    let chol = Cholesky::new(psi).ok_or(EstimationError::PsiFactorization { pilot, sa })?;
    let y_bar = y_bar_for_group(stats, group, sa, cfg);
    let innovation = chol.solve(&(obs.vector(pilot, sa) - y_bar));
    let link = stats.link(ue, sa);
    let sqrt_p = cfg.ue_power.sqrt();
    Ok(&link.mean + (&link.cov * innovation) * C64::new(sqrt_p, 0.0))
}

/// Error covariance of one link's MMSE estimate:
/// C = R - p tau_p R Psi^-1 R, evaluated as R Psi^-1 M.
pub fn error_covariance(
    assignment: &PilotAssignment,
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    ue: usize,
    sa: usize,
) -> Result<CMat, EstimationError> {
    let pilot = assignment.pilot(ue);
    let group = assignment.group(pilot);
    let psi = psi_for_group(stats, group, sa, cfg);
    let chol = Cholesky::new(psi).ok_or(EstimationError::PsiFactorization { pilot, sa })?;
    let link = stats.link(ue, sa);
    let m = residual_psi(stats, group, ue, sa, cfg);
    Ok(hermitize(&(&link.cov * chol.solve(&m))))
}

/// NMSE of one UE's collective estimate: sum of error traces over subarrays
/// normalized by N times the summed channel gain.
pub fn nmse_per_ue(
    assignment: &PilotAssignment,
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    ue: usize,
) -> Result<f64, EstimationError> {
    let pilot = assignment.pilot(ue);
    let group = assignment.group(pilot);
    let mut acc = 0.0;
    for sa in 0..stats.l {
        let psi = psi_for_group(stats, group, sa, cfg);
        let chol = Cholesky::new(psi).ok_or(EstimationError::PsiFactorization { pilot, sa })?;
        let m = residual_psi(stats, group, ue, sa, cfg);
        acc += link_error_trace(&chol, &stats.link(ue, sa).cov, &m);
    }
    Ok(acc / (stats.n as f64 * stats.beta_sum(ue)))
}

/// Sum of per-UE NMSE values; the pilot-assignment cost function.
pub fn average_nmse_cost(
    assignment: &PilotAssignment,
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
) -> Result<f64, EstimationError> {
    NmseCost::new(stats, cfg).cost(assignment.pilots())
}

/// Reusable NMSE cost evaluator for assignment searches: assembles each
/// (pilot, subarray) Psi once per candidate and accumulates error traces,
/// never materializing error covariance matrices.
pub struct NmseCost<'a> {
    stats: &'a ChannelStatistics,
    cfg: &'a ScenarioConfig,
    denom: Vec<f64>,
}

impl<'a> NmseCost<'a> {
    pub fn new(stats: &'a ChannelStatistics, cfg: &'a ScenarioConfig) -> Self {
        let denom = (0..stats.k)
            .map(|ue| stats.n as f64 * stats.beta_sum(ue))
            .collect();
        Self { stats, cfg, denom }
    }

    /// Cost of a candidate pilot vector. Group handling is identical for
    /// relabeled assignments, so the value is bitwise relabel-invariant.
    pub fn cost(&self, pilots: &[usize]) -> Result<f64, EstimationError> {
        let mut groups = vec![Vec::new(); self.cfg.tau_p];
        for (ue, &t) in pilots.iter().enumerate() {
            groups[t].push(ue);
        }
        let mut error_acc = vec![0.0; self.stats.k];
        for (t, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            for sa in 0..self.stats.l {
                let psi = psi_for_group(self.stats, group, sa, self.cfg);
                let chol = Cholesky::new(psi)
                    .ok_or(EstimationError::PsiFactorization { pilot: t, sa })?;
                for &ue in group {
                    let m = residual_psi(self.stats, group, ue, sa, self.cfg);
                    error_acc[ue] += link_error_trace(&chol, &self.stats.link(ue, sa).cov, &m);
                }
            }
        }
        Ok(error_acc
            .iter()
            .zip(&self.denom)
            .map(|(acc, denom)| acc / denom)
            .sum())
    }
}

/// Channel estimates for every (UE, subarray) link, one coherence block.
#[derive(Debug, Clone)]
pub struct Estimates {
    pub k: usize,
    pub l: usize,
    pub n: usize,
    h_hat: Vec<CVec>,
}

impl Estimates {
    pub fn vector(&self, ue: usize, sa: usize) -> &CVec {
        &self.h_hat[ue * self.l + sa]
    }
}

/// Per-assignment estimator state reused across realizations: factorized
/// Psi and observation means per (pilot, subarray), error covariances and
/// NMSE per link.
pub struct MethodEstimator {
    assignment: PilotAssignment,
    l: usize,
    psi_chol: Vec<Option<Cholesky<C64, Dyn>>>,
    y_bar: Vec<CVec>,
    error_cov: Vec<CMat>,
    nmse: Vec<f64>,
    cost: f64,
}

impl MethodEstimator {
    pub fn new(
        stats: &ChannelStatistics,
        assignment: PilotAssignment,
        cfg: &ScenarioConfig,
    ) -> Result<Self, EstimationError> {
        let tau_p = assignment.tau_p();
        let mut psi_chol = Vec::with_capacity(tau_p * stats.l);
        let mut y_bar = Vec::with_capacity(tau_p * stats.l);
        for t in 0..tau_p {
            let group = assignment.group(t);
            for sa in 0..stats.l {
                if group.is_empty() {
                    psi_chol.push(None);
                    y_bar.push(CVec::zeros(stats.n));
                    continue;
                }
                let psi = psi_for_group(stats, group, sa, cfg);
                let chol = Cholesky::new(psi)
                    .ok_or(EstimationError::PsiFactorization { pilot: t, sa })?;
                psi_chol.push(Some(chol));
                y_bar.push(y_bar_for_group(stats, group, sa, cfg));
            }
        }
        // per-link error statistics; traces use the same arithmetic as the
        // cost evaluator so reported NMSE matches search costs bitwise
        let mut error_cov = Vec::with_capacity(stats.k * stats.l);
        let mut nmse = Vec::with_capacity(stats.k);
        for ue in 0..stats.k {
            let t = assignment.pilot(ue);
            let group = assignment.group(t);
            let mut acc = 0.0;
            for sa in 0..stats.l {
                let chol = psi_chol[t * stats.l + sa]
                    .as_ref()
                    .expect("assigned pilot group is non-empty");
                let link = stats.link(ue, sa);
                let m = residual_psi(stats, group, ue, sa, cfg);
                error_cov.push(hermitize(&(&link.cov * chol.solve(&m))));
                acc += link_error_trace(chol, &link.cov, &m);
            }
            nmse.push(acc / (stats.n as f64 * stats.beta_sum(ue)));
        }
        let cost = nmse.iter().sum();
        Ok(Self {
            assignment,
            l: stats.l,
            psi_chol,
            y_bar,
            error_cov,
            nmse,
            cost,
        })
    }

    pub fn assignment(&self) -> &PilotAssignment {
        &self.assignment
    }

    pub fn error_covariance(&self, ue: usize, sa: usize) -> &CMat {
        &self.error_cov[ue * self.l + sa]
    }

    pub fn nmse(&self, ue: usize) -> f64 {
        self.nmse[ue]
    }

    pub fn nmse_values(&self) -> &[f64] {
        &self.nmse
    }

    /// Assignment cost: the sum of per-UE NMSE values.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// MMSE estimates for all links from one block's observations.
    pub fn estimate(&self, obs: &PilotObservations, stats: &ChannelStatistics, cfg: &ScenarioConfig) -> Estimates {
        let sqrt_p = C64::new(cfg.ue_power.sqrt(), 0.0);
        let mut h_hat = vec![CVec::zeros(stats.n); stats.k * stats.l];
        for t in self.assignment.used_pilots() {
            for sa in 0..stats.l {
                let idx = t * stats.l + sa;
                let chol = self.psi_chol[idx].as_ref().expect("used pilot");
                let innovation = chol.solve(&(obs.vector(t, sa) - &self.y_bar[idx]));
                for &ue in self.assignment.group(t) {
                    let link = stats.link(ue, sa);
                    h_hat[ue * stats.l + sa] =
                        &link.mean + (&link.cov * &innovation) * sqrt_p;
                }
            }
        }
        Estimates {
            k: stats.k,
            l: stats.l,
            n: stats.n,
            h_hat,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, ChannelStatistics, LinkStatistics, VisibilityMask};
    use crate::linalg::{hermitian_sqrt, rel_frobenius, trace_re};
    use crate::scenario::RawConfig;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn test_cfg(k: usize, l: usize, tau_p: usize) -> ScenarioConfig {
        let mut cfg = RawConfig::default().validate().unwrap();
        cfg.k = k;
        cfg.l = l;
        cfg.tau_p = tau_p;
        cfg
    }

    fn link_from_cov(mean: CVec, cov: CMat, beta_los: f64) -> LinkStatistics {
        let n = cov.nrows() as f64;
        let beta_nlos = trace_re(&cov) / n;
        let has_los = mean.norm_squared() > 0.0;
        LinkStatistics {
            sqrt_factor: hermitian_sqrt(&cov),
            beta: if has_los { beta_los } else { 0.0 } + beta_nlos,
            mean,
            cov,
            beta_los,
            beta_nlos,
        }
    }

    /// Statistics with R = beta I and zero mean on every link.
    fn scalar_stats(k: usize, l: usize, n: usize, beta: f64) -> ChannelStatistics {
        let links = (0..k * l)
            .map(|_| link_from_cov(CVec::zeros(n), CMat::identity(n, n).scale(beta), 0.0))
            .collect();
        ChannelStatistics {
            k,
            l,
            n,
            links,
            visibility: VisibilityMask::from_alpha(k, l, vec![false; k * l]),
        }
    }

    fn random_psd(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMat {
        let b = CMat::from_fn(n, n, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        });
        (&b * b.adjoint()).scale(scale / n as f64) + CMat::identity(n, n).scale(scale * 0.1)
    }

    fn random_stats(k: usize, l: usize, n: usize, scale: f64, seed: u64) -> ChannelStatistics {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let links = (0..k * l)
            .map(|_| {
                let cov = random_psd(n, scale, &mut rng);
                let mean = crate::linalg::sample_cn_vector(n, &mut rng) * C64::new(scale.sqrt(), 0.0);
                link_from_cov(mean, cov, scale)
            })
            .collect();
        ChannelStatistics {
            k,
            l,
            n,
            links,
            visibility: VisibilityMask::from_alpha(k, l, vec![true; k * l]),
        }
    }

    #[test]
    fn single_ue_zero_noise_observation_is_scaled_channel() {
        let mut cfg = test_cfg(1, 1, 2);
        cfg.noise_power = 0.0;
        let mean = CVec::from_fn(4, |i, _| C64::new(1.0 + i as f64, -0.5));
        let mut stats = scalar_stats(1, 1, 4, 1e-6);
        stats.links[0] = link_from_cov(mean.clone(), CMat::zeros(4, 4), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let real = sample_channel(&stats, &mut rng);
        let assignment = PilotAssignment::new(vec![0], 2);
        let obs = synthesize_pilot_observation(&real, &assignment, &cfg, &mut rng);
        let expected = mean * C64::new(cfg.ue_power.sqrt() * cfg.tau_p as f64, 0.0);
        assert!((obs.vector(0, 0) - expected).norm() < 1e-12);
        // nobody transmits pilot 1: observation is exactly zero without noise
        assert_eq!(obs.vector(1, 0).norm(), 0.0);
    }

    #[test]
    fn empty_pilot_noise_has_despread_variance() {
        let cfg = test_cfg(1, 1, 2);
        let stats = scalar_stats(1, 1, 4, 1e-9);
        let assignment = PilotAssignment::new(vec![0], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut acc = 0.0;
        let real = sample_channel(&stats, &mut ChaCha8Rng::seed_from_u64(9));
        for _ in 0..draws {
            let obs = synthesize_pilot_observation(&real, &assignment, &cfg, &mut rng);
            acc += obs.vector(1, 0).norm_squared();
        }
        let per_entry = acc / (draws as f64 * 4.0);
        let expected = cfg.tau_p as f64 * cfg.noise_power;
        assert_relative_eq!(per_entry, expected, max_relative = 0.03);
    }

    #[test]
    fn psi_without_sharers_is_scalar() {
        let cfg = test_cfg(1, 1, 2);
        let beta = 3e-7;
        let stats = scalar_stats(1, 1, 4, beta);
        let assignment = PilotAssignment::new(vec![0], 2);
        let psi = psi_matrix(&assignment, &stats, 0, 0, &cfg);
        let expected = cfg.ue_power * cfg.tau_p as f64 * beta + cfg.noise_power;
        for i in 0..4 {
            assert_relative_eq!(psi[(i, i)].re, expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn adding_a_sharer_grows_psi_diagonal() {
        let cfg = test_cfg(2, 1, 2);
        let stats = random_stats(2, 1, 4, 1e-7, 5);
        let alone = PilotAssignment::new(vec![0, 1], 2);
        let shared = PilotAssignment::new(vec![0, 0], 2);
        let psi_alone = psi_matrix(&alone, &stats, 0, 0, &cfg);
        let psi_shared = psi_matrix(&shared, &stats, 0, 0, &cfg);
        for i in 0..4 {
            assert!(psi_shared[(i, i)].re > psi_alone[(i, i)].re);
        }
    }

    #[test]
    fn two_equal_sharers_double_the_signal_trace() {
        let cfg = test_cfg(2, 1, 2);
        let beta = 2e-8;
        let stats = scalar_stats(2, 1, 4, beta);
        let shared = PilotAssignment::new(vec![0, 0], 2);
        let psi = psi_matrix(&shared, &stats, 0, 0, &cfg);
        let signal = trace_re(&psi) - 4.0 * cfg.noise_power;
        let expected = 2.0 * cfg.ue_power * cfg.tau_p as f64 * 4.0 * beta;
        assert_relative_eq!(signal, expected, max_relative = 1e-12);
    }

    #[test]
    fn vanishing_noise_recovers_the_channel() {
        let beta = 1e-6;
        let mut cfg = test_cfg(1, 1, 2);
        cfg.noise_power = 1e-20 * cfg.ue_power * cfg.tau_p as f64 * beta;
        let stats = scalar_stats(1, 1, 4, beta);
        let assignment = PilotAssignment::new(vec![0], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let real = sample_channel(&stats, &mut rng);
        let obs = synthesize_pilot_observation(&real, &assignment, &cfg, &mut rng);
        let h_hat = mmse_estimate(&obs, &assignment, &stats, &cfg, 0, 0).unwrap();
        let rel = (&h_hat - real.vector(0, 0)).norm() / real.vector(0, 0).norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn observation_at_its_mean_returns_prior_mean() {
        let cfg = test_cfg(1, 1, 1);
        let stats = random_stats(1, 1, 4, 1e-7, 77);
        let assignment = PilotAssignment::new(vec![0], 1);
        let y_bar = y_bar_for_group(&stats, assignment.group(0), 0, &cfg);
        let obs = PilotObservations::from_vectors(1, 1, vec![y_bar]);
        let h_hat = mmse_estimate(&obs, &assignment, &stats, &cfg, 0, 0).unwrap();
        assert!((h_hat - &stats.link(0, 0).mean).norm() < 1e-20);
    }

    #[test]
    fn sharer_estimates_are_deterministically_related() {
        // with equal powers: h_hat_b - mean_b = R_b R_a^-1 (h_hat_a - mean_a)
        let cfg = test_cfg(2, 1, 2);
        let stats = random_stats(2, 1, 4, 1e-7, 13);
        let assignment = PilotAssignment::new(vec![0, 0], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let real = sample_channel(&stats, &mut rng);
        let obs = synthesize_pilot_observation(&real, &assignment, &cfg, &mut rng);
        let h_a = mmse_estimate(&obs, &assignment, &stats, &cfg, 0, 0).unwrap();
        let h_b = mmse_estimate(&obs, &assignment, &stats, &cfg, 1, 0).unwrap();
        let r_a = &stats.link(0, 0).cov;
        let r_b = &stats.link(1, 0).cov;
        let residual_a = &h_a - &stats.link(0, 0).mean;
        let predicted_b = &stats.link(1, 0).mean
            + r_b * r_a.clone().lu().solve(&residual_a).unwrap();
        let rel = (&h_b - predicted_b).norm() / h_b.norm();
        assert!(rel < 1e-8, "relative residual {rel}");
    }

    #[test]
    fn infinite_noise_error_covariance_tends_to_prior() {
        let mut cfg = test_cfg(1, 1, 1);
        let stats = random_stats(1, 1, 4, 1e-7, 2);
        cfg.noise_power = 1e12 * cfg.ue_power * cfg.tau_p as f64 * 1e-7;
        let assignment = PilotAssignment::new(vec![0], 1);
        let c = error_covariance(&assignment, &stats, &cfg, 0, 0).unwrap();
        assert!(rel_frobenius(&c, &stats.link(0, 0).cov) < 1e-9);
    }

    #[test]
    fn scalar_error_covariance_matches_wiener_algebra() {
        let cfg = test_cfg(1, 1, 4);
        let beta = 4e-8;
        let stats = scalar_stats(1, 1, 4, beta);
        let assignment = PilotAssignment::new(vec![0], 4);
        let c = error_covariance(&assignment, &stats, &cfg, 0, 0).unwrap();
        let p_tau = cfg.ue_power * cfg.tau_p as f64;
        let expected = beta * cfg.noise_power / (p_tau * beta + cfg.noise_power);
        for i in 0..4 {
            assert_relative_eq!(c[(i, i)].re, expected, max_relative = 1e-12);
        }
        // error covariance never exceeds the prior in the Loewner order
        let gap = &stats.link(0, 0).cov - &c;
        assert!(crate::linalg::min_eigenvalue(&gap) >= -1e-9 * trace_re(&stats.link(0, 0).cov));
    }

    #[test]
    fn extra_sharers_never_reduce_error_trace() {
        for seed in 0..20 {
            let cfg = test_cfg(3, 1, 3);
            let stats = random_stats(3, 1, 3, 1e-7, seed);
            let alone = PilotAssignment::new(vec![0, 1, 2], 3);
            let pair = PilotAssignment::new(vec![0, 0, 2], 3);
            let c_alone = error_covariance(&alone, &stats, &cfg, 0, 0).unwrap();
            let c_pair = error_covariance(&pair, &stats, &cfg, 0, 0).unwrap();
            assert!(trace_re(&c_pair) >= trace_re(&c_alone) - 1e-18);
        }
    }

    #[test]
    fn scalar_nmse_matches_closed_form() {
        let cfg = test_cfg(1, 1, 4);
        let beta = 4e-8;
        let stats = scalar_stats(1, 1, 4, beta);
        let assignment = PilotAssignment::new(vec![0], 4);
        let nmse = nmse_per_ue(&assignment, &stats, &cfg, 0).unwrap();
        let p_tau = cfg.ue_power * cfg.tau_p as f64;
        let expected = cfg.noise_power / (p_tau * beta + cfg.noise_power);
        assert_relative_eq!(nmse, expected, max_relative = 1e-12);
    }

    #[test]
    fn nmse_stays_in_unit_interval() {
        for seed in 0..10 {
            let cfg = test_cfg(4, 3, 2);
            let stats = random_stats(4, 3, 3, 1e-8, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pilots: Vec<usize> = (0..4).map(|_| rng.random_range(0..2)).collect();
            let assignment = PilotAssignment::new(pilots, 2);
            for ue in 0..4 {
                let v = nmse_per_ue(&assignment, &stats, &cfg, ue).unwrap();
                assert!((0.0..=1.0).contains(&v), "nmse {v}");
            }
        }
    }

    #[test]
    fn cost_is_bitwise_relabel_invariant() {
        let cfg = test_cfg(5, 2, 3);
        let stats = random_stats(5, 2, 3, 1e-7, 400);
        let evaluator = NmseCost::new(&stats, &cfg);
        let original = [0usize, 1, 0, 2, 1];
        // relabel pilots 0 -> 2, 1 -> 0, 2 -> 1
        let relabeled: Vec<usize> = original.iter().map(|&t| [2, 0, 1][t]).collect();
        let c1 = evaluator.cost(&original).unwrap();
        let c2 = evaluator.cost(&relabeled).unwrap();
        assert_eq!(c1.to_bits(), c2.to_bits());
    }

    #[test]
    fn single_ue_cost_equals_its_nmse() {
        let cfg = test_cfg(1, 3, 2);
        let stats = random_stats(1, 3, 3, 1e-7, 41);
        let assignment = PilotAssignment::new(vec![1], 2);
        let cost = average_nmse_cost(&assignment, &stats, &cfg).unwrap();
        let nmse = nmse_per_ue(&assignment, &stats, &cfg, 0).unwrap();
        assert_eq!(cost.to_bits(), nmse.to_bits());
    }

    #[test]
    fn colocated_ues_prefer_distinct_pilots() {
        let cfg = test_cfg(2, 2, 2);
        let mut stats = random_stats(1, 2, 4, 1e-7, 55);
        // duplicate UE 0 as UE 1: perfectly co-located statistics
        let dup: Vec<LinkStatistics> = stats.links.clone();
        stats.links.extend(dup);
        stats.k = 2;
        stats.visibility = VisibilityMask::from_alpha(2, 2, vec![true; 4]);
        let evaluator = NmseCost::new(&stats, &cfg);
        let mut costs: Vec<(f64, [usize; 2])> = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                let c = evaluator.cost(&[a, b]).unwrap();
                costs.push((c, [a, b]));
            }
        }
        let best = costs
            .iter()
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .unwrap();
        assert_ne!(best.1[0], best.1[1], "distinct pilots must win: {costs:?}");
        let shared = costs.iter().find(|(_, p)| p[0] == p[1]).unwrap();
        assert!(best.0 < shared.0);
    }

    #[test]
    fn dropping_a_sharer_never_hurts_nmse() {
        for seed in 0..10 {
            let cfg = test_cfg(3, 2, 2);
            let stats = random_stats(3, 2, 3, 1e-7, 900 + seed);
            let shared = PilotAssignment::new(vec![0, 0, 0], 2);
            let reduced = PilotAssignment::new(vec![0, 0, 1], 2);
            let before = nmse_per_ue(&shared, &stats, &cfg, 0).unwrap();
            let after = nmse_per_ue(&reduced, &stats, &cfg, 0).unwrap();
            assert!(after <= before + 1e-15);
        }
    }

    #[test]
    fn empirical_error_covariance_matches_analytic() {
        let cfg = test_cfg(2, 1, 2);
        let stats = random_stats(2, 1, 3, 1e-7, 321);
        let assignment = PilotAssignment::new(vec![0, 0], 2);
        let estimator = MethodEstimator::new(&stats, assignment.clone(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 30_000;
        let mut err_cov = CMat::zeros(3, 3);
        let mut cross = CMat::zeros(3, 3);
        let mut mean_hat = CVec::zeros(3);
        for _ in 0..draws {
            let real = sample_channel(&stats, &mut rng);
            let obs = synthesize_pilot_observation(&real, &assignment, &cfg, &mut rng);
            let est = estimator.estimate(&obs, &stats, &cfg);
            let err = real.vector(0, 0) - est.vector(0, 0);
            err_cov += &err * err.adjoint();
            cross += est.vector(0, 0) * err.adjoint();
            mean_hat += est.vector(0, 0);
        }
        err_cov /= C64::new(draws as f64, 0.0);
        mean_hat /= C64::new(draws as f64, 0.0);
        cross /= C64::new(draws as f64, 0.0);
        cross -= &mean_hat * CVec::zeros(3).adjoint(); // err has zero mean
        let analytic = estimator.error_covariance(0, 0);
        assert!(
            rel_frobenius(&err_cov, analytic) < 0.05,
            "empirical vs analytic: {}",
            rel_frobenius(&err_cov, analytic)
        );
        // estimate and error are uncorrelated: cross-covariance drowns in
        // Monte-Carlo noise (3 sigma of the product scale)
        let floor = 3.0 * trace_re(analytic) / (draws as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                assert!(cross[(i, j)].norm() < floor, "cross[{i}{j}] = {}", cross[(i, j)]);
            }
        }
    }

    #[test]
    fn batch_estimator_matches_single_shot_path() {
        let cfg = test_cfg(3, 2, 2);
        let stats = random_stats(3, 2, 3, 1e-7, 10);
        let assignment = PilotAssignment::new(vec![0, 1, 0], 2);
        let estimator = MethodEstimator::new(&stats, assignment.clone(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let real = sample_channel(&stats, &mut rng);
        let obs = synthesize_pilot_observation(&real, &assignment, &cfg, &mut rng);
        let batch = estimator.estimate(&obs, &stats, &cfg);
        for ue in 0..3 {
            for sa in 0..2 {
                let single = mmse_estimate(&obs, &assignment, &stats, &cfg, ue, sa).unwrap();
                assert!((batch.vector(ue, sa) - single).norm() < 1e-18);
                let c_single = error_covariance(&assignment, &stats, &cfg, ue, sa).unwrap();
                assert!(rel_frobenius(estimator.error_covariance(ue, sa), &c_single) < 1e-14);
            }
        }
        let cost = average_nmse_cost(&assignment, &stats, &cfg).unwrap();
        assert_eq!(cost.to_bits(), estimator.cost().to_bits());
    }
}
