//! Pilot-assignment strategies: random, greedy, exhaustive (genie), and
//! genetic search. All cost-driven strategies minimize the same summed-NMSE
//! cost, so their outputs are directly comparable on one statistics epoch.

use rand::Rng;
use thiserror::Error;

use crate::channel::ChannelStatistics;
use crate::estimation::{EstimationError, NmseCost, PilotAssignment};
use crate::scenario::{GaParams, ScenarioConfig};

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error(
        "exhaustive search needs {required} cost evaluations, budget is {budget}; \
         use the ga method instead"
    )]
    BudgetExceeded { required: u128, budget: u64 },
    #[error(transparent)]
    Cost(#[from] EstimationError),
}

/// Uniform i.i.d. pilot per UE.
pub fn random_pa<R: Rng>(k: usize, tau_p: usize, rng: &mut R) -> PilotAssignment {
    let pilots = (0..k).map(|_| rng.random_range(0..tau_p)).collect();
    PilotAssignment::new(pilots, tau_p)
}

/// Contamination measure used by the greedy strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreedyMetric {
    /// NLoS gains of prior pilot holders at the UE's strongest subarray.
    #[default]
    StrongestSa,
    /// NLoS gains of prior pilot holders summed over every subarray.
    SumOverSas,
}

/// Greedy assignment: the first tau_p UEs take the orthogonal pilots, then
/// each remaining UE (in index order) takes the pilot with the least NLoS
/// contamination under the chosen metric. Ties break toward the lowest
/// pilot index; the result depends only on the gain tables.
pub fn greedy_pa_with_metric(
    stats: &ChannelStatistics,
    tau_p: usize,
    metric: GreedyMetric,
) -> PilotAssignment {
    let k = stats.k;
    let mut pilots = vec![0usize; k];
    let head = k.min(tau_p);
    for (ue, slot) in pilots.iter_mut().enumerate().take(head) {
        *slot = ue;
    }
    for ue in head..k {
        let holder_gain: Box<dyn Fn(usize) -> f64> = match metric {
            GreedyMetric::StrongestSa => {
                let strongest_sa = (0..stats.l)
                    .max_by(|&a, &b| stats.beta(ue, a).total_cmp(&stats.beta(ue, b)))
                    .expect("at least one subarray");
                Box::new(move |i| stats.beta_nlos(i, strongest_sa))
            }
            GreedyMetric::SumOverSas => {
                Box::new(|i| (0..stats.l).map(|sa| stats.beta_nlos(i, sa)).sum())
            }
        };
        let mut best_pilot = 0;
        let mut best_load = f64::INFINITY;
        for t in 0..tau_p {
            let load: f64 = (0..ue)
                .filter(|&i| pilots[i] == t)
                .map(&holder_gain)
                .sum();
            if load < best_load {
                best_load = load;
                best_pilot = t;
            }
        }
        pilots[ue] = best_pilot;
    }
    PilotAssignment::new(pilots, tau_p)
}

/// Greedy assignment with the default strongest-subarray metric.
pub fn greedy_pa(stats: &ChannelStatistics, tau_p: usize) -> PilotAssignment {
    greedy_pa_with_metric(stats, tau_p, GreedyMetric::StrongestSa)
}

/// Exhaustive minimization of `cost` over all tau_p^k assignments.
///
/// The cost is invariant under relabeling pilots (bitwise: group handling is
/// label-independent), so the first UE's pilot is pinned to 0; the reduced
/// search returns the same minimum cost and the lexicographically smallest
/// minimizer.
pub fn exhaustive_search<F>(
    k: usize,
    tau_p: usize,
    budget: u64,
    mut cost: F,
) -> Result<(PilotAssignment, f64), AssignmentError>
where
    F: FnMut(&[usize]) -> Result<f64, EstimationError>,
{
    let required = (tau_p as u128)
        .checked_pow(k as u32)
        .unwrap_or(u128::MAX);
    if required > budget as u128 {
        return Err(AssignmentError::BudgetExceeded { required, budget });
    }
    let mut candidate = vec![0usize; k];
    let mut best = candidate.clone();
    let mut best_cost = cost(&candidate)?;
    // odometer over positions 1..k (position 0 stays 0)
    loop {
        let mut pos = k.wrapping_sub(1);
        loop {
            if pos == 0 {
                let assignment = PilotAssignment::new(best, tau_p);
                return Ok((assignment, best_cost));
            }
            if candidate[pos] + 1 < tau_p {
                candidate[pos] += 1;
                break;
            }
            candidate[pos] = 0;
            pos -= 1;
        }
        let c = cost(&candidate)?;
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&candidate);
        }
    }
}

/// Genie assignment: exhaustive search driven by the NMSE cost.
pub fn genie_pa(
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
) -> Result<(PilotAssignment, f64), AssignmentError> {
    let evaluator = NmseCost::new(stats, cfg);
    exhaustive_search(stats.k, cfg.tau_p, cfg.exhaustive_budget, |pilots| {
        evaluator.cost(pilots)
    })
}

/// Best-ever cost after each iteration (the first entry covers the initial
/// population).
#[derive(Debug, Clone)]
pub struct GaTrace {
    pub best_cost: Vec<f64>,
}

/// Genetic search over pilot vectors.
///
/// Per iteration: A offspring are bred from two distinct parents drawn
/// uniformly out of the `elite` lowest-cost candidates, crossed over at a
/// uniform point that leaves both parents at least one gene, then mutated
/// per gene with probability `mutation_probability` to a uniformly chosen
/// different pilot. The best candidate ever evaluated is tracked and
/// returned; `iterations` counts the initial population as the first
/// iteration.
pub fn ga_search<F, R>(
    k: usize,
    tau_p: usize,
    params: &GaParams,
    seeds: &[Vec<usize>],
    mut cost: F,
    rng: &mut R,
) -> Result<(PilotAssignment, f64, GaTrace), AssignmentError>
where
    F: FnMut(&[usize]) -> Result<f64, EstimationError>,
    R: Rng,
{
    assert!(params.population >= 2 && params.elite >= 2);
    assert!(params.elite <= params.population);
    let a = params.population;

    let mut population: Vec<(f64, Vec<usize>)> = Vec::with_capacity(a);
    for seed in seeds.iter().take(a) {
        population.push((cost(seed)?, seed.clone()));
    }
    while population.len() < a {
        let candidate: Vec<usize> = (0..k).map(|_| rng.random_range(0..tau_p)).collect();
        population.push((cost(&candidate)?, candidate));
    }
    population.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut best_cost = population[0].0;
    let mut best = population[0].1.clone();
    let mut trace = vec![best_cost];

    for _ in 1..params.iterations {
        let mut next: Vec<(f64, Vec<usize>)> = Vec::with_capacity(a);
        for _ in 0..a {
            let first = rng.random_range(0..params.elite);
            let second = {
                let mut other = rng.random_range(0..params.elite - 1);
                if other >= first {
                    other += 1;
                }
                other
            };
            let mut child = population[first].1.clone();
            if k > 1 {
                let cut = rng.random_range(1..k);
                child[cut..].copy_from_slice(&population[second].1[cut..]);
            }
            if tau_p > 1 {
                for gene in child.iter_mut() {
                    if rng.random_range(0.0..1.0) < params.mutation_probability {
                        let mut replacement = rng.random_range(0..tau_p - 1);
                        if replacement >= *gene {
                            replacement += 1;
                        }
                        *gene = replacement;
                    }
                }
            }
            next.push((cost(&child)?, child));
        }
        next.sort_by(|x, y| x.0.total_cmp(&y.0));
        if next[0].0 < best_cost {
            best_cost = next[0].0;
            best = next[0].1.clone();
        }
        population = next;
        trace.push(best_cost);
    }

    Ok((
        PilotAssignment::new(best, tau_p),
        best_cost,
        GaTrace { best_cost: trace },
    ))
}

/// Genetic assignment driven by the NMSE cost.
pub fn ga_pa<R: Rng>(
    stats: &ChannelStatistics,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(PilotAssignment, f64, GaTrace), AssignmentError> {
    let evaluator = NmseCost::new(stats, cfg);
    ga_search(
        stats.k,
        cfg.tau_p,
        &cfg.ga,
        &[],
        |pilots| evaluator.cost(pilots),
        rng,
    )
}
