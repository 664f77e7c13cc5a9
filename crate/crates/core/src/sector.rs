//! Sector presence, occupancy counts and congestion probabilities.
//!
//! A flight is present during a slice when its `[entry, exit]` interval
//! intersects the slice at any moment; flights need not be in the sector
//! simultaneously. Occupancy is the Poisson-binomial count over
//! independent flights, and congestion is the event that the count exceeds
//! the sector capacity.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::exec::Exec;
use crate::flight::{PointId, TrajectoryBelief};

/// Default slice width in minutes.
pub const DEFAULT_SLICE_WIDTH: f64 = 15.0;
/// Default congestion threshold.
pub const DEFAULT_EPSILON: f64 = 0.75;

/// Boundary pair through which a route crosses a sector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub entry: PointId,
    pub exit: PointId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub id: String,
    pub capacity: u32,
    pub gates: Vec<Gate>,
}

impl Sector {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| ModelError::InvalidSector {
            sector: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.capacity < 1 {
            return Err(invalid("capacity must be at least 1"));
        }
        if self.gates.is_empty() {
            return Err(invalid("no boundary points"));
        }
        if self.gates.iter().any(|g| g.entry == g.exit) {
            return Err(invalid("entry and exit coincide"));
        }
        Ok(())
    }

    /// Indices of the entry and exit points on a route, using the first gate
    /// whose entry precedes its exit.
    pub fn crossing(&self, points: &[PointId]) -> Option<(usize, usize)> {
        self.gates.iter().find_map(|g| {
            let entry = points.iter().position(|p| *p == g.entry)?;
            let exit = points.iter().position(|p| *p == g.exit)?;
            (entry < exit).then_some((entry, exit))
        })
    }

    /// Fails when a route visits a gate's exit before its entry.
    pub fn check_route(&self, points: &[PointId]) -> Result<()> {
        for g in &self.gates {
            let entry = points.iter().position(|p| *p == g.entry);
            let exit = points.iter().position(|p| *p == g.exit);
            if let (Some(a), Some(b)) = (entry, exit) {
                if b < a {
                    return Err(ModelError::InvalidSector {
                        sector: self.id.clone(),
                        reason: format!("exit {} precedes entry {} on a route", g.exit, g.entry),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSlice {
    pub t0: f64,
    pub t1: f64,
}

impl TimeSlice {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if t0.is_nan() || t1.is_nan() || t0 >= t1 {
            return Err(ModelError::InvalidSlice { t0, t1 });
        }
        Ok(TimeSlice { t0, t1 })
    }

    pub fn unbounded() -> Self {
        TimeSlice {
            t0: f64::NEG_INFINITY,
            t1: f64::INFINITY,
        }
    }

    /// Closed-interval intersection with `[entry, exit]`.
    pub fn intersects(&self, entry: f64, exit: f64) -> bool {
        entry <= self.t1 && exit >= self.t0
    }
}

/// Consecutive slices of equal width covering `[origin, horizon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slicing {
    #[serde(default)]
    pub origin: f64,
    pub width: f64,
    pub horizon: f64,
}

impl Slicing {
    pub fn new(origin: f64, width: f64, horizon: f64) -> Result<Self> {
        let s = Slicing {
            origin,
            width,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "slice width must be positive, got {}",
                self.width
            )));
        }
        if !(self.horizon > self.origin) || !self.horizon.is_finite() || !self.origin.is_finite() {
            return Err(ModelError::InvalidConfig(format!(
                "horizon {} must lie after origin {}",
                self.horizon, self.origin
            )));
        }
        Ok(())
    }

    pub fn slices(&self) -> Vec<TimeSlice> {
        let n = ((self.horizon - self.origin) / self.width - 1e-9)
            .ceil()
            .max(1.0) as usize;
        (0..n)
            .map(|k| TimeSlice {
                t0: self.origin + k as f64 * self.width,
                t1: self.origin + (k + 1) as f64 * self.width,
            })
            .collect()
    }
}

/// Probability that the flight's sector interval intersects `slice`.
///
/// `1 - P(T_entry > t1) - P(T_exit < t0)`; the two events are disjoint
/// because the exit never precedes the entry.
pub fn presence_probability(belief: &TrajectoryBelief, sector: &Sector, slice: TimeSlice) -> f64 {
    let Some((entry, exit)) = sector.crossing(&belief.points) else {
        return 0.0;
    };
    let late = belief.overflight[entry].survival(slice.t1);
    let early = belief.overflight[exit].cdf_before(slice.t0);
    (1.0 - late - early).clamp(0.0, 1.0)
}

/// Poisson-binomial distribution of the number of successes among
/// independent Bernoulli trials; entry `k` is P(count = k).
pub fn occupancy_distribution(presence: &[f64]) -> Vec<f64> {
    let mut dist = vec![0.0; presence.len() + 1];
    dist[0] = 1.0;
    for (n, &p) in presence.iter().enumerate() {
        for k in (1..=n + 1).rev() {
            dist[k] = dist[k] * (1.0 - p) + dist[k - 1] * p;
        }
        dist[0] *= 1.0 - p;
    }
    dist
}

/// P(count > capacity).
pub fn tail_above(dist: &[f64], capacity: u32) -> f64 {
    dist.iter()
        .skip(capacity as usize + 1)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Occupancy distribution of `sector` over `slice`.
pub fn sector_occupancy(
    beliefs: &[TrajectoryBelief],
    sector: &Sector,
    slice: TimeSlice,
) -> Vec<f64> {
    let presence: Vec<f64> = beliefs
        .iter()
        .map(|b| presence_probability(b, sector, slice))
        .collect();
    occupancy_distribution(&presence)
}

pub fn congestion_probability(
    beliefs: &[TrajectoryBelief],
    sector: &Sector,
    slice: TimeSlice,
) -> f64 {
    tail_above(&sector_occupancy(beliefs, sector, slice), sector.capacity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCongestion {
    pub sector_id: String,
    pub t0: f64,
    pub t1: f64,
    pub congestion_probability: f64,
    pub flagged: bool,
}

/// Per-sector, per-slice congestion probabilities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SectorTimeline {
    pub epsilon: f64,
    pub entries: Vec<SliceCongestion>,
}

impl SectorTimeline {
    pub fn from_probabilities(
        sectors: &[Sector],
        slices: &[TimeSlice],
        probabilities: Vec<f64>,
        epsilon: f64,
    ) -> Self {
        debug_assert_eq!(probabilities.len(), sectors.len() * slices.len());
        let entries = probabilities
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let sector = &sectors[i / slices.len()];
                let slice = slices[i % slices.len()];
                SliceCongestion {
                    sector_id: sector.id.clone(),
                    t0: slice.t0,
                    t1: slice.t1,
                    congestion_probability: p,
                    flagged: p > epsilon,
                }
            })
            .collect();
        SectorTimeline { epsilon, entries }
    }

    pub fn get(&self, sector: &str, t0: f64) -> Option<&SliceCongestion> {
        self.entries
            .iter()
            .find(|e| e.sector_id == sector && (e.t0 - t0).abs() < 1e-9)
    }

    pub fn max_probability(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.congestion_probability)
            .fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &SliceCongestion> {
        self.entries.iter().filter(|e| e.flagged)
    }

    /// Σ max(0, P(C) − ε) over all entries.
    pub fn excess(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| (e.congestion_probability - self.epsilon).max(0.0))
            .sum()
    }
}

pub fn congestion_timeline(
    beliefs: &[TrajectoryBelief],
    sectors: &[Sector],
    slicing: &Slicing,
    epsilon: f64,
) -> SectorTimeline {
    congestion_timeline_with(Exec::default(), beliefs, sectors, slicing, epsilon)
}

pub fn congestion_timeline_with(
    exec: Exec,
    beliefs: &[TrajectoryBelief],
    sectors: &[Sector],
    slicing: &Slicing,
    epsilon: f64,
) -> SectorTimeline {
    let slices = slicing.slices();
    let probabilities = exec.map_indexed(sectors.len() * slices.len(), |i| {
        congestion_probability(
            beliefs,
            &sectors[i / slices.len()],
            slices[i % slices.len()],
        )
    });
    SectorTimeline::from_probabilities(sectors, &slices, probabilities, epsilon)
}
