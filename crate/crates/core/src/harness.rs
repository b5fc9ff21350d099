//! Monte-Carlo campaign driver.
//!
//! A drop fixes one statistics epoch (UE positions, LoS visibility, shadow
//! fields, correlation matrices); every configured pilot-assignment method
//! then runs against that same epoch, and the channel/noise realizations
//! feeding the SE expectation reuse one stream per realization across
//! methods, so method comparisons are fully paired. Seeds derive from
//! (master seed, drop index, stage), making results independent of
//! scheduling order.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::assignment::{ga_pa, genie_pa, greedy_pa_with_metric, random_pa, AssignmentError};
use crate::channel::{
    channel_statistics, los_probability, sample_channel, sample_visibility,
    shadow_cross_covariance, ChannelError, CorrelationQuadrature, ShadowFactor, ShadowField,
};
use crate::detection::{combiners, se_ul, sinr_ul, MetricsRecord};
use crate::estimation::{synthesize_pilot_observation, EstimationError, MethodEstimator};
use crate::rng::{DropSeeds, Stage};
use crate::scenario::{build_topology, link_geometry, PaMethod, ScenarioConfig};
use crate::selection::strongest_ue_selection;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no successful drops")]
    NoSuccessfulDrops,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One pilot-assignment method's outcome on one drop.
#[derive(Debug, Clone, Serialize)]
pub struct MethodDropResult {
    pub method: PaMethod,
    /// Summed-NMSE assignment cost (K times the average NMSE).
    pub cost: f64,
    /// Best-ever GA cost per iteration (genetic method only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ga_trace: Option<Vec<f64>>,
    pub records: Vec<MetricsRecord>,
    pub avg_nmse: f64,
    pub max_nmse: f64,
    pub min_nmse: f64,
    pub sum_se: f64,
    pub min_se: f64,
    pub max_se: f64,
}

impl MethodDropResult {
    fn from_records(
        method: PaMethod,
        cost: f64,
        ga_trace: Option<Vec<f64>>,
        records: Vec<MetricsRecord>,
    ) -> Self {
        let k = records.len() as f64;
        let avg_nmse = records.iter().map(|r| r.nmse).sum::<f64>() / k;
        let max_nmse = records.iter().map(|r| r.nmse).fold(f64::NEG_INFINITY, f64::max);
        let min_nmse = records.iter().map(|r| r.nmse).fold(f64::INFINITY, f64::min);
        let sum_se = records.iter().map(|r| r.se).sum::<f64>();
        let min_se = records.iter().map(|r| r.se).fold(f64::INFINITY, f64::min);
        let max_se = records.iter().map(|r| r.se).fold(f64::NEG_INFINITY, f64::max);
        Self {
            method,
            cost,
            ga_trace,
            records,
            avg_nmse,
            max_nmse,
            min_nmse,
            sum_se,
            min_se,
            max_se,
        }
    }
}

/// One completed statistics drop with all configured methods.
#[derive(Debug, Clone, Serialize)]
pub struct DropResult {
    pub drop_id: usize,
    pub seed: u64,
    /// Digest of the statistics epoch shared by every method below.
    pub stats_checksum: u64,
    /// Diagonal jitter the shadow factorization needed, if any.
    pub shadow_jitter: Option<f64>,
    pub mean_los_probability: f64,
    pub empirical_los_fraction: f64,
    pub methods: Vec<MethodDropResult>,
}

impl DropResult {
    pub fn method(&self, method: PaMethod) -> &MethodDropResult {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .expect("method was configured for this campaign")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DropFailure {
    pub drop_id: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignResult {
    pub config: ScenarioConfig,
    pub methods: Vec<PaMethod>,
    pub drops: Vec<DropResult>,
    pub failures: Vec<DropFailure>,
}

/// Run the full pipeline for one drop: topology, statistics epoch, then per
/// method assignment, selection, and the paired realization loop.
pub fn run_drop(
    cfg: &ScenarioConfig,
    methods: &[PaMethod],
    drop_id: usize,
    quad: &CorrelationQuadrature,
) -> Result<DropResult, HarnessError> {
    let seeds = DropSeeds::new(cfg.master_seed, drop_id as u64);
    let topo = build_topology(cfg, &mut seeds.stage_rng(Stage::Topology));
    let links = link_geometry(&topo, cfg);
    let visibility = sample_visibility(&links, &mut seeds.stage_rng(Stage::Visibility));

    let cov_unit = shadow_cross_covariance(&topo, &links, cfg.decorr_distance, 1.0);
    let factor = ShadowFactor::new(&cov_unit)?;
    if let Some(eps) = factor.jitter() {
        // first-step jitter is routine for this covariance model; only an
        // escalated repair is worth a log line
        let max_diag = (0..cov_unit.nrows())
            .map(|i| cov_unit[(i, i)])
            .fold(0.0, f64::max);
        if eps > 2e-10 * max_diag {
            eprintln!("warning: drop {drop_id}: shadow covariance needed jitter {eps:.2e}");
        }
    }
    let shadow_los = ShadowField::new(
        factor.sample_scaled(cfg.sigma_sf_los_db, &mut seeds.stage_rng(Stage::ShadowLos)),
        cfg.l,
    );
    let shadow_nlos = ShadowField::new(
        factor.sample_scaled(cfg.sigma_sf_nlos_db, &mut seeds.stage_rng(Stage::ShadowNlos)),
        cfg.l,
    );
    let stats = channel_statistics(&links, &visibility, &shadow_los, &shadow_nlos, cfg, quad)?;

    let mean_los_probability = links
        .iter()
        .map(|(_, g)| los_probability(g.distance))
        .sum::<f64>()
        / (cfg.k * cfg.l) as f64;

    // assignment and selection once per method, statistics-rate; pilot
    // labels are canonicalized so that methods agreeing on the grouping
    // consume identical noise pairings downstream
    let mut estimators = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut ga_trace = None;
        let assignment = match method {
            PaMethod::Random => {
                random_pa(cfg.k, cfg.tau_p, &mut seeds.stage_rng(Stage::PaRandom))
            }
            PaMethod::Greedy => greedy_pa_with_metric(&stats, cfg.tau_p, cfg.greedy_metric),
            PaMethod::Genie => genie_pa(&stats, cfg)?.0,
            PaMethod::Ga => {
                let (pa, _, trace) = ga_pa(&stats, cfg, &mut seeds.stage_rng(Stage::PaGa))?;
                ga_trace = Some(trace.best_cost);
                pa
            }
        }
        .canonicalized();
        let estimator = MethodEstimator::new(&stats, assignment, cfg)?;
        let map = strongest_ue_selection(&stats, estimator.assignment());
        estimators.push((method, estimator, map, ga_trace));
    }

    // paired realization loop: one channel and one noise stream per
    // realization, shared verbatim by every method
    let mut sinr_samples = vec![vec![Vec::with_capacity(cfg.realizations_per_drop); cfg.k]; methods.len()];
    for r in 0..cfg.realizations_per_drop {
        let real = sample_channel(&stats, &mut seeds.realization_rng(Stage::Channel, r as u64));
        let noise_rng = seeds.realization_rng(Stage::PilotNoise, r as u64);
        for (m_idx, (_, estimator, map, _)) in estimators.iter().enumerate() {
            let obs = synthesize_pilot_observation(
                &real,
                estimator.assignment(),
                cfg,
                &mut noise_rng.clone(),
            );
            let est = estimator.estimate(&obs, &stats, cfg);
            let vs = combiners(&est, estimator, map, cfg);
            for (ue, v) in vs.iter().enumerate() {
                let sinr = sinr_ul(&est, estimator, map, v.as_ref(), cfg, ue);
                sinr_samples[m_idx][ue].push(sinr);
            }
        }
    }

    let methods_out = estimators
        .into_iter()
        .enumerate()
        .map(|(m_idx, (method, estimator, map, ga_trace))| {
            let records = (0..cfg.k)
                .map(|ue| MetricsRecord {
                    ue,
                    nmse: estimator.nmse(ue),
                    se: se_ul(&sinr_samples[m_idx][ue], cfg),
                    served: map.is_served(ue),
                    n_serving_sas: map.serving_sas(ue).len(),
                })
                .collect();
            MethodDropResult::from_records(method, estimator.cost(), ga_trace, records)
        })
        .collect();

    Ok(DropResult {
        drop_id,
        seed: seeds.seed(),
        stats_checksum: stats.checksum(),
        shadow_jitter: factor.jitter(),
        mean_los_probability,
        empirical_los_fraction: stats.visibility.los_fraction(),
        methods: methods_out,
    })
}

/// Run every configured drop, in parallel, collecting failures without
/// aborting the campaign.
pub fn run_campaign(
    cfg: &ScenarioConfig,
    methods: &[PaMethod],
) -> Result<CampaignResult, HarnessError> {
    let quad = CorrelationQuadrature::new(
        cfg.quadrature_points,
        cfg.spacing_over_wavelength(),
        cfg.n,
    );
    let completed = AtomicUsize::new(0);
    let stride = (cfg.drops / 20).max(1);
    let outcomes: Vec<Result<DropResult, HarnessError>> = (0..cfg.drops)
        .into_par_iter()
        .map(|drop_id| {
            let out = run_drop(cfg, methods, drop_id, &quad);
            let done = completed.fetch_add(1, Ordering::Relaxed) + 1;
            if done.is_multiple_of(stride) || done == cfg.drops {
                eprintln!("progress: {done}/{} drops", cfg.drops);
            }
            out
        })
        .collect();

    let mut drops = Vec::with_capacity(cfg.drops);
    let mut failures = Vec::new();
    for (drop_id, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(drop) => drops.push(drop),
            Err(err) => {
                let seed = DropSeeds::new(cfg.master_seed, drop_id as u64).seed();
                eprintln!("warning: drop {drop_id} failed (seed {seed}): {err}");
                failures.push(DropFailure {
                    drop_id,
                    seed,
                    error: err.to_string(),
                });
            }
        }
    }
    if drops.is_empty() {
        return Err(HarnessError::NoSuccessfulDrops);
    }
    Ok(CampaignResult {
        config: cfg.clone(),
        methods: methods.to_vec(),
        drops,
        failures,
    })
}

/// Metrics with one empirical CDF per method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfMetric {
    AvgNmse,
    MaxNmse,
    MinNmse,
    PerUeNmse,
    PerUeSe,
    MinSe,
    MaxSe,
    SumSe,
}

impl CdfMetric {
    pub const ALL: [CdfMetric; 8] = [
        CdfMetric::AvgNmse,
        CdfMetric::MaxNmse,
        CdfMetric::MinNmse,
        CdfMetric::PerUeNmse,
        CdfMetric::PerUeSe,
        CdfMetric::MinSe,
        CdfMetric::MaxSe,
        CdfMetric::SumSe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CdfMetric::AvgNmse => "avg_nmse",
            CdfMetric::MaxNmse => "max_nmse",
            CdfMetric::MinNmse => "min_nmse",
            CdfMetric::PerUeNmse => "per_ue_nmse",
            CdfMetric::PerUeSe => "per_ue_se",
            CdfMetric::MinSe => "min_se",
            CdfMetric::MaxSe => "max_se",
            CdfMetric::SumSe => "sum_se",
        }
    }
}

/// Empirical CDF: sorted sample values; the probability at index i is
/// (i + 1) / n.
#[derive(Debug, Clone, Serialize)]
pub struct Cdf {
    pub values: Vec<f64>,
}

impl Cdf {
    pub fn from_samples(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { values }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.values.len() as f64;
        (1..=self.values.len()).map(|i| i as f64 / n).collect()
    }
}

/// Per-method campaign averages.
#[derive(Debug, Clone, Serialize)]
pub struct MethodAggregates {
    pub method: PaMethod,
    pub mean_cost: f64,
    pub mean_avg_nmse: f64,
    pub mean_max_nmse: f64,
    pub mean_min_nmse: f64,
    pub mean_per_ue_se: f64,
    pub mean_sum_se: f64,
    pub mean_min_se: f64,
    pub mean_max_se: f64,
    pub unserved_fraction: f64,
}

impl CampaignResult {
    fn method_drops(&self, method: PaMethod) -> impl Iterator<Item = &MethodDropResult> {
        self.drops.iter().map(move |d| d.method(method))
    }

    pub fn metric_samples(&self, metric: CdfMetric, method: PaMethod) -> Vec<f64> {
        match metric {
            CdfMetric::AvgNmse => self.method_drops(method).map(|m| m.avg_nmse).collect(),
            CdfMetric::MaxNmse => self.method_drops(method).map(|m| m.max_nmse).collect(),
            CdfMetric::MinNmse => self.method_drops(method).map(|m| m.min_nmse).collect(),
            CdfMetric::SumSe => self.method_drops(method).map(|m| m.sum_se).collect(),
            CdfMetric::MinSe => self.method_drops(method).map(|m| m.min_se).collect(),
            CdfMetric::MaxSe => self.method_drops(method).map(|m| m.max_se).collect(),
            CdfMetric::PerUeNmse => self
                .method_drops(method)
                .flat_map(|m| m.records.iter().map(|r| r.nmse))
                .collect(),
            CdfMetric::PerUeSe => self
                .method_drops(method)
                .flat_map(|m| m.records.iter().map(|r| r.se))
                .collect(),
        }
    }

    pub fn cdf(&self, metric: CdfMetric, method: PaMethod) -> Cdf {
        Cdf::from_samples(self.metric_samples(metric, method))
    }

    pub fn aggregates(&self, method: PaMethod) -> MethodAggregates {
        let n = self.drops.len() as f64;
        let mean = |f: &dyn Fn(&MethodDropResult) -> f64| {
            self.method_drops(method).map(f).sum::<f64>() / n
        };
        let total_records: usize = self.method_drops(method).map(|m| m.records.len()).sum();
        let unserved: usize = self
            .method_drops(method)
            .flat_map(|m| m.records.iter())
            .filter(|r| !r.served)
            .count();
        MethodAggregates {
            method,
            mean_cost: mean(&|m| m.cost),
            mean_avg_nmse: mean(&|m| m.avg_nmse),
            mean_max_nmse: mean(&|m| m.max_nmse),
            mean_min_nmse: mean(&|m| m.min_nmse),
            mean_per_ue_se: mean(&|m| {
                m.records.iter().map(|r| r.se).sum::<f64>() / m.records.len() as f64
            }),
            mean_sum_se: mean(&|m| m.sum_se),
            mean_min_se: mean(&|m| m.min_se),
            mean_max_se: mean(&|m| m.max_se),
            unserved_fraction: unserved as f64 / total_records as f64,
        }
    }

    pub fn mean_los_probability(&self) -> f64 {
        self.drops.iter().map(|d| d.mean_los_probability).sum::<f64>() / self.drops.len() as f64
    }

    pub fn empirical_los_fraction(&self) -> f64 {
        self.drops
            .iter()
            .map(|d| d.empirical_los_fraction)
            .sum::<f64>()
            / self.drops.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(format!("unknown output format '{other}'")),
        }
    }
}

/// 17 significant digits: round-trips f64 exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize)]
struct CdfDump {
    metric: CdfMetric,
    method: PaMethod,
    values: Vec<f64>,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ScenarioConfig,
    methods: &'a [PaMethod],
    drops_requested: usize,
    drops_completed: usize,
    failures: &'a [DropFailure],
    mean_los_probability: f64,
    empirical_los_fraction: f64,
    aggregates: Vec<MethodAggregates>,
    cdfs: Vec<CdfDump>,
    drops: Vec<DropSummary>,
}

#[derive(Serialize)]
struct DropSummary {
    drop_id: usize,
    seed: u64,
    stats_checksum: u64,
    methods: Vec<MethodSummary>,
}

#[derive(Serialize)]
struct MethodSummary {
    method: PaMethod,
    cost: f64,
    avg_nmse: f64,
    min_se: f64,
    sum_se: f64,
}

/// Write campaign outputs: a per-UE CSV, a JSON summary, and one
/// plot-ready two-column CDF file per (metric, method). Returns the list
/// of written paths.
pub fn write_results(
    result: &CampaignResult,
    format: OutputFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if result.drops.is_empty() {
        return Err(HarnessError::NoSuccessfulDrops);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let path = out_dir.join("results.csv");
        let mut buf = String::from("drop_id,method,ue,nmse,se,served,n_serving_sas\n");
        for drop in &result.drops {
            for method in &drop.methods {
                for rec in &method.records {
                    buf.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        drop.drop_id,
                        method.method.name(),
                        rec.ue,
                        fmt_f64(rec.nmse),
                        fmt_f64(rec.se),
                        rec.served,
                        rec.n_serving_sas
                    ));
                }
            }
        }
        fs::write(&path, buf).map_err(io_err(&path))?;
        written.push(path);

        for metric in CdfMetric::ALL {
            for &method in &result.methods {
                let cdf = result.cdf(metric, method);
                let path = out_dir.join(format!("cdf_{}_{}.csv", metric.name(), method.name()));
                let mut buf = String::from("value,cdf\n");
                for (v, p) in cdf.values.iter().zip(cdf.probabilities()) {
                    buf.push_str(&format!("{},{}\n", fmt_f64(*v), fmt_f64(p)));
                }
                fs::write(&path, buf).map_err(io_err(&path))?;
                written.push(path);
            }
        }

        // GA convergence traces, when the genetic method ran
        if result.methods.contains(&PaMethod::Ga) {
            let path = out_dir.join("ga_trace.csv");
            let mut buf = String::from("drop_id,iteration,best_cost\n");
            for drop in &result.drops {
                if let Some(trace) = &drop.method(PaMethod::Ga).ga_trace {
                    for (it, cost) in trace.iter().enumerate() {
                        buf.push_str(&format!("{},{},{}\n", drop.drop_id, it, fmt_f64(*cost)));
                    }
                }
            }
            fs::write(&path, buf).map_err(io_err(&path))?;
            written.push(path);
        }
    }

    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        let aggregates = result
            .methods
            .iter()
            .map(|&m| result.aggregates(m))
            .collect();
        let cdfs = CdfMetric::ALL
            .iter()
            .flat_map(|&metric| {
                result.methods.iter().map(move |&method| {
                    let cdf = result.cdf(metric, method);
                    CdfDump {
                        metric,
                        method,
                        probabilities: cdf.probabilities(),
                        values: cdf.values,
                    }
                })
            })
            .collect();
        let drops = result
            .drops
            .iter()
            .map(|d| DropSummary {
                drop_id: d.drop_id,
                seed: d.seed,
                stats_checksum: d.stats_checksum,
                methods: d
                    .methods
                    .iter()
                    .map(|m| MethodSummary {
                        method: m.method,
                        cost: m.cost,
                        avg_nmse: m.avg_nmse,
                        min_se: m.min_se,
                        sum_se: m.sum_se,
                    })
                    .collect(),
            })
            .collect();
        let summary = Summary {
            config: &result.config,
            methods: &result.methods,
            drops_requested: result.config.drops,
            drops_completed: result.drops.len(),
            failures: &result.failures,
            mean_los_probability: result.mean_los_probability(),
            empirical_los_fraction: result.empirical_los_fraction(),
            aggregates,
            cdfs,
            drops,
        };
        let path = out_dir.join("summary.json");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut writer = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, &summary)
            .map_err(|e| HarnessError::Io {
                path: path.clone(),
                source: e.into(),
            })?;
        writer.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    Ok(written)
}
