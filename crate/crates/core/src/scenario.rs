//! Scenario configuration, topology construction, and per-link geometry.
//!
//! The configuration file uses explicit units (dBm, dB, degrees); everything
//! is converted to linear mW and radians at validation time so the rest of
//! the pipeline works in linear units only.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config file: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// Pilot-assignment strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaMethod {
    Random,
    Greedy,
    Genie,
    Ga,
}

impl PaMethod {
    pub const ALL: [PaMethod; 4] = [
        PaMethod::Random,
        PaMethod::Greedy,
        PaMethod::Genie,
        PaMethod::Ga,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PaMethod::Random => "random",
            PaMethod::Greedy => "greedy",
            PaMethod::Genie => "genie",
            PaMethod::Ga => "ga",
        }
    }
}

impl std::str::FromStr for PaMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(PaMethod::Random),
            "greedy" => Ok(PaMethod::Greedy),
            "genie" => Ok(PaMethod::Genie),
            "ga" => Ok(PaMethod::Ga),
            other => Err(format!("unknown pilot-assignment method '{other}'")),
        }
    }
}

/// Genetic-algorithm hyperparameters (resolved, after validation).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaParams {
    /// Iteration budget, counting the initial population evaluation.
    pub iterations: usize,
    /// Population size A.
    pub population: usize,
    /// Per-gene mutation probability.
    pub mutation_probability: f64,
    /// Number of lowest-cost candidates eligible as parents.
    pub elite: usize,
}

/// Raw GA section of the config file; `population` and `elite` default to
/// 2K and ceil(A/2) when omitted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGaParams {
    pub iterations: Option<usize>,
    pub population: Option<usize>,
    pub mutation_probability: Option<f64>,
    pub elite: Option<usize>,
}

/// File-facing configuration. Every field is optional; defaults reproduce
/// the standard urban-micro setup (25 subarrays of 4 antennas over a 100 m
/// array, 200 m square cell, 10 dBm UEs, -96 dBm noise).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    // array
    pub subarrays: Option<usize>,
    pub antennas_per_subarray: Option<usize>,
    pub array_length_m: Option<f64>,
    pub sa_height_m: Option<f64>,
    pub wavelength_m: Option<f64>,
    /// Defaults to half a wavelength.
    pub antenna_spacing_m: Option<f64>,

    // cell and users
    pub cell_half_width_m: Option<f64>,
    pub ue_height_m: Option<f64>,
    pub ue_count: Option<usize>,

    // protocol
    pub tau_p: Option<usize>,
    pub tau_c: Option<usize>,
    /// Defaults to tau_c - tau_p.
    pub tau_u: Option<usize>,

    // powers
    pub ue_power_dbm: Option<f64>,
    pub noise_power_dbm: Option<f64>,

    // large-scale fading
    pub beta0: Option<f64>,
    pub gamma: Option<f64>,
    pub sigma_sf_los_db: Option<f64>,
    pub sigma_sf_nlos_db: Option<f64>,
    pub decorrelation_distance_m: Option<f64>,
    pub sigma_phi_deg: Option<f64>,
    pub sigma_theta_deg: Option<f64>,

    // campaign
    pub drops: Option<usize>,
    pub realizations_per_drop: Option<usize>,
    pub master_seed: Option<u64>,
    pub quadrature_points: Option<usize>,
    pub pa_method: Option<PaMethod>,
    pub exhaustive_budget: Option<u64>,
    /// Greedy contamination metric: "strongest_sa" (default) or
    /// "sum_over_sas".
    pub greedy_metric: Option<crate::assignment::GreedyMetric>,

    pub ga: Option<RawGaParams>,
}

/// Validated scenario configuration in internal units:
/// linear mW for powers, radians for angles, meters for distances.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioConfig {
    pub l: usize,
    pub n: usize,
    pub array_length: f64,
    pub sa_height: f64,
    pub ue_height: f64,
    pub wavelength: f64,
    pub antenna_spacing: f64,
    pub cell_half_width: f64,
    pub k: usize,
    pub tau_p: usize,
    pub tau_c: usize,
    pub tau_u: usize,
    /// Per-UE uplink transmit power, mW.
    pub ue_power: f64,
    /// Receiver noise power, mW.
    pub noise_power: f64,
    pub beta0: f64,
    pub gamma: f64,
    /// Shadowing standard deviations stay in dB: the shadow field lives in
    /// the dB domain.
    pub sigma_sf_los_db: f64,
    pub sigma_sf_nlos_db: f64,
    pub decorr_distance: f64,
    pub sigma_phi: f64,
    pub sigma_theta: f64,
    pub drops: usize,
    pub realizations_per_drop: usize,
    pub master_seed: u64,
    pub quadrature_points: usize,
    pub pa_method: PaMethod,
    pub exhaustive_budget: u64,
    pub greedy_metric: crate::assignment::GreedyMetric,
    pub ga: GaParams,
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg.to_radians()
}

impl RawConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Resolve defaults, convert units, and check every invariant.
    pub fn validate(&self) -> Result<ScenarioConfig, ConfigError> {
        let l = self.subarrays.unwrap_or(25);
        let n = self.antennas_per_subarray.unwrap_or(4);
        let wavelength = self.wavelength_m.unwrap_or(0.125);
        let antenna_spacing = self.antenna_spacing_m.unwrap_or(wavelength / 2.0);
        let k = self.ue_count.unwrap_or(6);
        let tau_p = self.tau_p.unwrap_or(4);
        let tau_c = self.tau_c.unwrap_or(200);
        let tau_u = self.tau_u.unwrap_or(tau_c.saturating_sub(tau_p));

        let cfg = ScenarioConfig {
            l,
            n,
            array_length: self.array_length_m.unwrap_or(100.0),
            sa_height: self.sa_height_m.unwrap_or(10.0),
            ue_height: self.ue_height_m.unwrap_or(1.5),
            wavelength,
            antenna_spacing,
            cell_half_width: self.cell_half_width_m.unwrap_or(100.0),
            k,
            tau_p,
            tau_c,
            tau_u,
            ue_power: dbm_to_mw(self.ue_power_dbm.unwrap_or(10.0)),
            noise_power: dbm_to_mw(self.noise_power_dbm.unwrap_or(-96.0)),
            beta0: self.beta0.unwrap_or(8.9125e-4),
            gamma: self.gamma.unwrap_or(4.0),
            sigma_sf_los_db: self.sigma_sf_los_db.unwrap_or(3.0),
            sigma_sf_nlos_db: self.sigma_sf_nlos_db.unwrap_or(4.0),
            decorr_distance: self.decorrelation_distance_m.unwrap_or(9.0),
            sigma_phi: deg_to_rad(self.sigma_phi_deg.unwrap_or(10.0)),
            sigma_theta: deg_to_rad(self.sigma_theta_deg.unwrap_or(10.0)),
            drops: self.drops.unwrap_or(1000),
            realizations_per_drop: self.realizations_per_drop.unwrap_or(100),
            master_seed: self.master_seed.unwrap_or(1),
            quadrature_points: self.quadrature_points.unwrap_or(200),
            pa_method: self.pa_method.unwrap_or(PaMethod::Ga),
            exhaustive_budget: self.exhaustive_budget.unwrap_or(1_000_000),
            greedy_metric: self.greedy_metric.unwrap_or_default(),
            ga: {
                let raw = self.ga.clone().unwrap_or_default();
                let population = raw.population.unwrap_or((2 * k).max(2));
                GaParams {
                    iterations: raw.iterations.unwrap_or(15),
                    population,
                    mutation_probability: raw.mutation_probability.unwrap_or(0.02),
                    elite: raw.elite.unwrap_or(population.div_ceil(2).max(2)),
                }
            },
        };
        cfg.check()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    fn check(&self) -> Result<(), ConfigError> {
        if self.l == 0 {
            return Err(invalid("subarrays", "L must be >= 1"));
        }
        if self.n == 0 {
            return Err(invalid("antennas_per_subarray", "N must be >= 1"));
        }
        if self.k == 0 {
            return Err(invalid("ue_count", "K must be >= 1"));
        }
        if self.tau_p == 0 {
            return Err(invalid("tau_p", "tau_p must be >= 1"));
        }
        if self.tau_p > self.tau_c {
            return Err(invalid(
                "tau_p",
                format!("tau_p ({}) must not exceed tau_c ({})", self.tau_p, self.tau_c),
            ));
        }
        if self.tau_u > self.tau_c - self.tau_p {
            return Err(invalid(
                "tau_u",
                format!(
                    "tau_u ({}) must not exceed tau_c - tau_p ({})",
                    self.tau_u,
                    self.tau_c - self.tau_p
                ),
            ));
        }
        for (field, v) in [
            ("array_length_m", self.array_length),
            ("wavelength_m", self.wavelength),
            ("antenna_spacing_m", self.antenna_spacing),
            ("cell_half_width_m", self.cell_half_width),
            ("ue_power_dbm", self.ue_power),
            ("noise_power_dbm", self.noise_power),
            ("beta0", self.beta0),
            ("decorrelation_distance_m", self.decorr_distance),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(field, "must be strictly positive"));
            }
        }
        if self.sa_height <= self.ue_height || !self.sa_height.is_finite() {
            return Err(invalid(
                "sa_height_m",
                "subarray height must exceed UE height",
            ));
        }
        if self.gamma <= 0.0 {
            return Err(invalid("gamma", "path-loss exponent must be positive"));
        }
        for (field, v) in [
            ("sigma_sf_los_db", self.sigma_sf_los_db),
            ("sigma_sf_nlos_db", self.sigma_sf_nlos_db),
            ("sigma_phi_deg", self.sigma_phi),
            ("sigma_theta_deg", self.sigma_theta),
        ] {
            if v < 0.0 {
                return Err(invalid(field, "must be non-negative"));
            }
        }
        if self.drops == 0 {
            return Err(invalid("drops", "at least one Monte-Carlo drop required"));
        }
        if self.realizations_per_drop == 0 {
            return Err(invalid(
                "realizations_per_drop",
                "at least one channel realization per drop required",
            ));
        }
        if self.quadrature_points < 8 {
            return Err(invalid("quadrature_points", "must be >= 8"));
        }
        if self.ga.iterations == 0 {
            return Err(invalid("ga.iterations", "must be >= 1"));
        }
        if self.ga.population < 2 {
            return Err(invalid("ga.population", "population must be >= 2"));
        }
        if self.ga.elite < 2 {
            return Err(invalid("ga.elite", "need at least two parent candidates"));
        }
        if self.ga.elite > self.ga.population {
            return Err(invalid("ga.elite", "elite count exceeds population"));
        }
        if !(0.0..=1.0).contains(&self.ga.mutation_probability) {
            return Err(invalid(
                "ga.mutation_probability",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Total antenna count M = L * N.
    pub fn total_antennas(&self) -> usize {
        self.l * self.n
    }

    /// Antenna spacing in wavelengths.
    pub fn spacing_over_wavelength(&self) -> f64 {
        self.antenna_spacing / self.wavelength
    }

    /// Fraction of each coherence block carrying uplink data.
    pub fn prelog(&self) -> f64 {
        self.tau_u as f64 / self.tau_c as f64
    }
}

/// Positions of subarray reference antennas and dropped UEs.
#[derive(Debug, Clone)]
pub struct Topology {
    /// One 3-D point per subarray (its first antenna), meters.
    pub sa_positions: Vec<[f64; 3]>,
    /// One 3-D point per UE, meters.
    pub ue_positions: Vec<[f64; 3]>,
}

/// Geometry of one UE-SA link.
#[derive(Debug, Clone, Copy)]
pub struct LinkGeometry {
    /// 3-D distance to the subarray reference antenna.
    pub distance: f64,
    /// Horizontal (ground-plane) distance.
    pub distance_2d: f64,
    /// LoS azimuth from array broadside, radians.
    pub azimuth: f64,
    /// LoS elevation, radians, positive when the SA is above the UE.
    pub elevation: f64,
}

/// K x L table of link geometries, row-major over UEs.
#[derive(Debug, Clone)]
pub struct LinkTable {
    pub k: usize,
    pub l: usize,
    links: Vec<LinkGeometry>,
}

impl LinkTable {
    pub fn get(&self, ue: usize, sa: usize) -> &LinkGeometry {
        &self.links[ue * self.l + sa]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &LinkGeometry)> {
        let l = self.l;
        self.links
            .iter()
            .enumerate()
            .map(move |(idx, g)| ((idx / l, idx % l), g))
    }
}

/// L subarray reference points equally spaced over the array length,
/// centered at the origin on the y-axis; K UEs uniform over the square cell.
pub fn build_topology<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Topology {
    let spacing = cfg.array_length / cfg.l as f64;
    let offset = (cfg.l as f64 - 1.0) / 2.0;
    let sa_positions = (0..cfg.l)
        .map(|l| [0.0, (l as f64 - offset) * spacing, cfg.sa_height])
        .collect();
    let w = cfg.cell_half_width;
    let ue_positions = (0..cfg.k)
        .map(|_| {
            let x = rng.random_range(-w..=w);
            let y = rng.random_range(-w..=w);
            [x, y, cfg.ue_height]
        })
        .collect();
    Topology {
        sa_positions,
        ue_positions,
    }
}

/// Distances and LoS angles for every UE-SA pair.
///
/// Azimuth zero is the array broadside (x-axis): sin(azimuth) equals the
/// y-offset over the horizontal distance. A UE directly under a subarray
/// (zero horizontal distance) gets azimuth 0 by convention.
pub fn link_geometry(topo: &Topology, cfg: &ScenarioConfig) -> LinkTable {
    let mut links = Vec::with_capacity(cfg.k * cfg.l);
    for ue in &topo.ue_positions {
        for sa in &topo.sa_positions {
            let dx = ue[0] - sa[0];
            let dy = ue[1] - sa[1];
            let dz = sa[2] - ue[2];
            let d2d = (dx * dx + dy * dy).sqrt();
            let d = (d2d * d2d + dz * dz).sqrt();
            let azimuth = if d2d > 0.0 {
                (dy / d2d).clamp(-1.0, 1.0).asin()
            } else {
                0.0
            };
            let elevation = dz.atan2(d2d);
            links.push(LinkGeometry {
                distance: d,
                distance_2d: d2d,
                azimuth,
                elevation,
            });
        }
    }
    LinkTable {
        k: cfg.k,
        l: cfg.l,
        links,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table1() -> ScenarioConfig {
        RawConfig::default().validate().unwrap()
    }

    #[test]
    fn defaults_accept_and_convert_units() {
        let cfg = table1();
        assert_eq!(cfg.l, 25);
        assert_eq!(cfg.n, 4);
        assert_eq!(cfg.tau_p, 4);
        assert_relative_eq!(cfg.ue_power, 10.0, epsilon = 1e-12);
        assert_relative_eq!(cfg.noise_power, 10f64.powf(-9.6), epsilon = 1e-22);
        assert_relative_eq!(cfg.beta0, 8.9125e-4);
        assert_relative_eq!(cfg.antenna_spacing, 0.0625);
        assert_relative_eq!(cfg.sigma_phi, 10f64.to_radians());
        assert_eq!(cfg.ga.population, 12);
        assert_eq!(cfg.ga.elite, 6);
    }

    #[test]
    fn tau_p_zero_is_rejected_by_name() {
        let raw = RawConfig {
            tau_p: Some(0),
            ..Default::default()
        };
        let err = raw.validate().unwrap_err().to_string();
        assert!(err.contains("tau_p") && err.contains(">= 1"), "{err}");
    }

    #[test]
    fn elite_above_population_is_rejected() {
        let raw = RawConfig {
            ga: Some(RawGaParams {
                population: Some(8),
                elite: Some(9),
                ..Default::default()
            }),
            ..Default::default()
        };
        let err = raw.validate().unwrap_err().to_string();
        assert!(err.contains("elite count exceeds population"), "{err}");
    }

    #[test]
    fn tau_u_defaults_to_remaining_symbols() {
        let cfg = table1();
        assert_eq!(cfg.tau_u, cfg.tau_c - cfg.tau_p);
        assert_relative_eq!(cfg.prelog(), 196.0 / 200.0);
    }

    #[test]
    fn sa_positions_are_uniform_and_centered() {
        let cfg = table1();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let topo = build_topology(&cfg, &mut rng);
        assert_eq!(topo.sa_positions.len(), 25);
        let spacing = topo.sa_positions[1][1] - topo.sa_positions[0][1];
        assert_relative_eq!(spacing, 100.0 / 25.0, epsilon = 1e-12);
        // symmetric about the origin
        for (a, b) in topo
            .sa_positions
            .iter()
            .zip(topo.sa_positions.iter().rev())
        {
            assert_relative_eq!(a[1], -b[1], epsilon = 1e-12);
        }
        assert!(topo.sa_positions.iter().all(|p| p[2] == 10.0 && p[0] == 0.0));
    }

    #[test]
    fn single_sa_sits_at_origin() {
        let raw = RawConfig {
            subarrays: Some(1),
            ..Default::default()
        };
        let cfg = raw.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let topo = build_topology(&cfg, &mut rng);
        assert_eq!(topo.sa_positions, vec![[0.0, 0.0, 10.0]]);
    }

    #[test]
    fn equal_seeds_give_bitwise_equal_drops() {
        let cfg = table1();
        let t1 = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(77));
        let t2 = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(t1.ue_positions, t2.ue_positions);
        let t3 = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(78));
        assert_ne!(t1.ue_positions, t3.ue_positions);
    }

    #[test]
    fn ue_drops_stay_inside_cell() {
        let cfg = table1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let topo = build_topology(&cfg, &mut rng);
            for p in &topo.ue_positions {
                assert!(p[0].abs() <= cfg.cell_half_width);
                assert!(p[1].abs() <= cfg.cell_half_width);
                assert_eq!(p[2], cfg.ue_height);
            }
        }
    }

    #[test]
    fn broadside_ue_has_zero_azimuth() {
        let cfg = table1();
        let topo = Topology {
            sa_positions: vec![[0.0, 3.0, 10.0]],
            ue_positions: vec![[40.0, 3.0, 1.5]],
        };
        let links = link_geometry(&topo, &make_cfg_kl(&cfg, 1, 1));
        assert_relative_eq!(links.get(0, 0).azimuth, 0.0);
    }

    #[test]
    fn ue_below_sa_uses_azimuth_convention() {
        let cfg = table1();
        let topo = Topology {
            sa_positions: vec![[0.0, 2.0, 10.0]],
            ue_positions: vec![[0.0, 2.0, 1.5]],
        };
        let links = link_geometry(&topo, &make_cfg_kl(&cfg, 1, 1));
        let g = links.get(0, 0);
        assert_relative_eq!(g.distance, 8.5, epsilon = 1e-12);
        assert_relative_eq!(g.distance_2d, 0.0);
        assert_relative_eq!(g.azimuth, 0.0);
        assert_relative_eq!(g.elevation, std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn three_four_five_triangle_azimuth() {
        let cfg = table1();
        let topo = Topology {
            sa_positions: vec![[0.0, -10.0, 10.0]],
            ue_positions: vec![[30.0, 30.0, 1.5]],
        };
        let links = link_geometry(&topo, &make_cfg_kl(&cfg, 1, 1));
        let g = links.get(0, 0);
        assert_relative_eq!(g.distance_2d, 50.0, epsilon = 1e-12);
        assert_relative_eq!(g.azimuth.sin(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn distances_are_consistent_with_heights() {
        let cfg = table1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let topo = build_topology(&cfg, &mut rng);
        let links = link_geometry(&topo, &cfg);
        let dz = cfg.sa_height - cfg.ue_height;
        for (_, g) in links.iter() {
            assert!(g.distance >= dz);
            let recomputed = (g.distance_2d.powi(2) + dz * dz).sqrt();
            assert_relative_eq!(recomputed, g.distance, max_relative = 1e-12);
            assert!(g.azimuth.abs() <= std::f64::consts::FRAC_PI_2);
            assert!(g.elevation > 0.0);
        }
    }

    // helper: same physical parameters, different K/L
    fn make_cfg_kl(cfg: &ScenarioConfig, k: usize, l: usize) -> ScenarioConfig {
        let mut c = cfg.clone();
        c.k = k;
        c.l = l;
        c
    }
}
