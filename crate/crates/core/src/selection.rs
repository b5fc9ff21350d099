//! Strongest-UE subarray selection and derived serving structures.
//!
//! Each subarray serves exactly one UE per used pilot: the one with the
//! largest combined gain among that pilot's sharers. Serving sets are kept
//! as index lists; the block-diagonal masks they imply are never
//! materialized, all downstream algebra runs on the reduced antenna
//! subspace.

use crate::channel::ChannelStatistics;
use crate::estimation::PilotAssignment;

/// Serving subarray sets per UE, with the derived partner sets.
#[derive(Debug, Clone)]
pub struct ServingMap {
    n: usize,
    serving: Vec<Vec<usize>>,
    partners: Vec<Vec<usize>>,
}

impl ServingMap {
    pub fn from_serving_sets(serving: Vec<Vec<usize>>, n: usize) -> Self {
        let partners = partner_sets(&serving);
        Self {
            n,
            serving,
            partners,
        }
    }

    pub fn k(&self) -> usize {
        self.serving.len()
    }

    /// Subarrays serving `ue`, ascending.
    pub fn serving_sas(&self, ue: usize) -> &[usize] {
        &self.serving[ue]
    }

    /// UEs sharing at least one serving subarray with `ue` (itself included
    /// when served).
    pub fn partners(&self, ue: usize) -> &[usize] {
        &self.partners[ue]
    }

    pub fn is_served(&self, ue: usize) -> bool {
        !self.serving[ue].is_empty()
    }

    /// Dimension of the reduced antenna subspace of `ue`.
    pub fn antenna_count(&self, ue: usize) -> usize {
        self.n * self.serving[ue].len()
    }
}

/// Partner sets from serving sets: i is a partner of k when their serving
/// sets intersect.
pub fn partner_sets(serving: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let k = serving.len();
    let intersects = |a: &[usize], b: &[usize]| {
        let (mut ia, mut ib) = (0, 0);
        while ia < a.len() && ib < b.len() {
            match a[ia].cmp(&b[ib]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => ia += 1,
                std::cmp::Ordering::Greater => ib += 1,
            }
        }
        false
    };
    (0..k)
        .map(|ue| {
            (0..k)
                .filter(|&other| intersects(&serving[ue], &serving[other]))
                .collect()
        })
        .collect()
}

/// Strongest-UE selection: per (subarray, used pilot), the sharer with the
/// largest combined gain wins; ties break toward the lowest UE index.
pub fn strongest_ue_selection(
    stats: &ChannelStatistics,
    assignment: &PilotAssignment,
) -> ServingMap {
    let mut serving = vec![Vec::new(); stats.k];
    for sa in 0..stats.l {
        for t in assignment.used_pilots() {
            let mut winner = None;
            let mut best = f64::NEG_INFINITY;
            for &ue in assignment.group(t) {
                let gain = stats.beta(ue, sa);
                if gain > best {
                    best = gain;
                    winner = Some(ue);
                }
            }
            serving[winner.expect("used pilot has sharers")].push(sa);
        }
    }
    ServingMap::from_serving_sets(serving, stats.n)
}
