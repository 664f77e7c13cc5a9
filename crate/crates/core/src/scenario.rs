//! Monte-Carlo trajectory sampling.
//!
//! A scenario holds one sampled trajectory per flight. Every draw gets its
//! own generator keyed by `(master_seed, flight, edge slot)` on the stream
//! of its scenario index, so a set is reproducible under any parallel
//! schedule, and two evaluations that share a seed see common random
//! numbers for every edge they share.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::PiecewisePdf;
use crate::error::{ModelError, Result};
use crate::exec::Exec;
use crate::flight::{Anchor, FlightId, FlightPlan, PointId};
use crate::sector::{Sector, SectorTimeline, Slicing};

/// Default sample count for stand-alone estimation.
pub const DEFAULT_SAMPLES: usize = 100_000;
/// Default sample count inside optimizer evaluations.
pub const DEFAULT_INNER_SAMPLES: usize = 1_000;

const CHUNK: usize = 1024;

/// One flight's input to the sampler.
#[derive(Debug, Clone, Copy)]
pub struct SampleInput<'a> {
    pub plan: &'a FlightPlan,
    /// One mean shift per plan edge, or empty.
    pub shifts: &'a [f64],
    pub anchor: Option<&'a Anchor>,
}

impl<'a> SampleInput<'a> {
    pub fn new(plan: &'a FlightPlan) -> Self {
        SampleInput {
            plan,
            shifts: &[],
            anchor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSample {
    /// Overflight time at each point of the active route.
    pub times: Vec<f64>,
    /// `times[i + 1] - times[i]`.
    pub travel: Vec<f64>,
}

impl FlightSample {
    pub fn departure(&self) -> f64 {
        self.times[0]
    }

    pub fn arrival(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub flights: Vec<FlightSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub master_seed: u64,
    pub flight_ids: Vec<FlightId>,
    pub routes: Vec<Vec<PointId>>,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Writes one JSON object per scenario.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            scenario: usize,
            flights: Vec<FlightLine<'a>>,
        }
        #[derive(Serialize)]
        struct FlightLine<'a> {
            flight: &'a str,
            points: &'a [PointId],
            times: &'a [f64],
        }
        for (k, s) in self.scenarios.iter().enumerate() {
            let line = Line {
                scenario: k,
                flights: s
                    .flights
                    .iter()
                    .enumerate()
                    .map(|(f, fs)| FlightLine {
                        flight: &self.flight_ids[f],
                        points: &self.routes[f],
                        times: &fs.times,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Slot 0 is the departure draw; slot `e + 1` is plan edge `e`.
pub fn draw_key(master_seed: u64, flight: usize, slot: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ flight as u64) ^ slot as u64)
}

/// Generator for one draw.
pub fn draw_rng(master_seed: u64, scenario: usize, flight: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_key(master_seed, flight, slot));
    rng.set_stream(scenario as u64);
    rng
}

struct FlightSampler {
    departure: PiecewisePdf,
    travel: Vec<PiecewisePdf>,
    slots: Vec<usize>,
    anchor: Option<(usize, f64)>,
}

impl FlightSampler {
    fn new(input: &SampleInput<'_>) -> Result<Self> {
        let plan = input.plan;
        plan.check_shifts(input.shifts)?;
        let edges = plan.route_edges(plan.active_route);
        let travel = edges
            .iter()
            .map(|&e| {
                let delta = input.shifts.get(e).copied().unwrap_or(0.0);
                Ok(plan.edges[e].travel.to_pdf()?.shift(delta))
            })
            .collect::<Result<Vec<_>>>()?;
        let anchor = match input.anchor {
            Some(a) => {
                let index = plan
                    .active_points()
                    .iter()
                    .position(|p| *p == a.point)
                    .ok_or_else(|| ModelError::PointNotOnRoute {
                        flight: plan.id.clone(),
                        point: a.point.clone(),
                    })?;
                Some((index, a.time))
            }
            None => None,
        };
        Ok(FlightSampler {
            departure: plan.departure.to_pdf()?,
            travel,
            slots: edges.iter().map(|e| e + 1).collect(),
            anchor,
        })
    }

    fn sample(&self, seed: u64, scenario: usize, flight: usize) -> FlightSample {
        let draw = |pdf: &PiecewisePdf, slot: usize| {
            pdf.sample(&mut draw_rng(seed, scenario, flight, slot))
        };
        let n = self.travel.len() + 1;
        let mut times = vec![0.0; n];
        match self.anchor {
            None => {
                times[0] = draw(&self.departure, 0);
                for i in 0..self.travel.len() {
                    times[i + 1] = times[i] + draw(&self.travel[i], self.slots[i]);
                }
            }
            Some((index, t)) => {
                times[index] = t;
                // Upstream of the observation, walk the chain backwards.
                for i in (0..index).rev() {
                    times[i] = times[i + 1] - draw(&self.travel[i], self.slots[i]);
                }
                for i in index..self.travel.len() {
                    times[i + 1] = times[i] + draw(&self.travel[i], self.slots[i]);
                }
            }
        }
        let travel = times.windows(2).map(|w| w[1] - w[0]).collect();
        FlightSample { times, travel }
    }
}

pub fn sample_scenarios(
    inputs: &[SampleInput<'_>],
    m: usize,
    master_seed: u64,
) -> Result<ScenarioSet> {
    sample_scenarios_with(Exec::default(), inputs, m, master_seed)
}

pub fn sample_scenarios_with(
    exec: Exec,
    inputs: &[SampleInput<'_>],
    m: usize,
    master_seed: u64,
) -> Result<ScenarioSet> {
    if m == 0 {
        return Err(ModelError::InvalidConfig(
            "scenario count must be at least 1".into(),
        ));
    }
    let samplers = inputs
        .iter()
        .map(FlightSampler::new)
        .collect::<Result<Vec<_>>>()?;
    let scenarios = exec.map_indexed(m, |k| Scenario {
        flights: samplers
            .iter()
            .enumerate()
            .map(|(f, s)| s.sample(master_seed, k, f))
            .collect(),
    });
    Ok(ScenarioSet {
        master_seed,
        flight_ids: inputs.iter().map(|i| i.plan.id.clone()).collect(),
        routes: inputs
            .iter()
            .map(|i| i.plan.active_points().to_vec())
            .collect(),
        scenarios,
    })
}

/// Monte-Carlo congestion estimates with 3σ Bernoulli half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedTimeline {
    pub timeline: SectorTimeline,
    pub half_widths: Vec<f64>,
    pub samples: usize,
}

pub fn estimate_congestion(
    set: &ScenarioSet,
    sectors: &[Sector],
    slicing: &Slicing,
    epsilon: f64,
) -> EstimatedTimeline {
    estimate_congestion_with(Exec::default(), set, sectors, slicing, epsilon)
}

/// Fraction of scenarios in which more flights than the capacity have an
/// `[entry, exit]` interval intersecting each slice.
pub fn estimate_congestion_with(
    exec: Exec,
    set: &ScenarioSet,
    sectors: &[Sector],
    slicing: &Slicing,
    epsilon: f64,
) -> EstimatedTimeline {
    let slices = slicing.slices();
    let cells = sectors.len() * slices.len();
    // crossings[s] = (flight, entry index, exit index)
    let crossings: Vec<Vec<(usize, usize, usize)>> = sectors
        .iter()
        .map(|sector| {
            set.routes
                .iter()
                .enumerate()
                .filter_map(|(f, r)| sector.crossing(r).map(|(a, b)| (f, a, b)))
                .collect()
        })
        .collect();
    let chunks = set.len().div_ceil(CHUNK);
    let partial = exec.map_indexed(chunks, |c| {
        let mut exceed = vec![0u64; cells];
        let end = ((c + 1) * CHUNK).min(set.len());
        for scenario in &set.scenarios[c * CHUNK..end] {
            for (s, sector) in sectors.iter().enumerate() {
                for (j, slice) in slices.iter().enumerate() {
                    let count = crossings[s]
                        .iter()
                        .filter(|&&(f, a, b)| {
                            let times = &scenario.flights[f].times;
                            slice.intersects(times[a], times[b])
                        })
                        .count();
                    if count > sector.capacity as usize {
                        exceed[s * slices.len() + j] += 1;
                    }
                }
            }
        }
        exceed
    });
    let mut totals = vec![0u64; cells];
    for p in partial {
        for (t, v) in totals.iter_mut().zip(p) {
            *t += v;
        }
    }
    let m = set.len() as f64;
    let probabilities: Vec<f64> = totals.iter().map(|&c| c as f64 / m).collect();
    let half_widths = probabilities
        .iter()
        .map(|&p| 3.0 * (p * (1.0 - p) / m).sqrt())
        .collect();
    EstimatedTimeline {
        timeline: SectorTimeline::from_probabilities(sectors, &slices, probabilities, epsilon),
        half_widths,
        samples: set.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEstimate {
    pub flight: FlightId,
    pub mean: f64,
    pub variance: f64,
    /// 3·s/√M.
    pub half_width: f64,
}

/// Sample means of the arrival times with 3σ/√M half-widths.
///
/// A single scenario reports zero variance and an unbounded half-width.
pub fn estimate_expected_arrivals(set: &ScenarioSet) -> Result<Vec<ArrivalEstimate>> {
    if set.is_empty() {
        return Err(ModelError::InvalidConfig(
            "no scenarios to estimate from".into(),
        ));
    }
    let m = set.len() as f64;
    Ok(set
        .flight_ids
        .iter()
        .enumerate()
        .map(|(f, id)| {
            let mean = set
                .scenarios
                .iter()
                .map(|s| s.flights[f].arrival())
                .sum::<f64>()
                / m;
            let variance = set
                .scenarios
                .iter()
                .map(|s| (s.flights[f].arrival() - mean).powi(2))
                .sum::<f64>()
                / (m - 1.0).max(1.0);
            let half_width = if set.len() < 2 {
                f64::INFINITY
            } else {
                3.0 * (variance / m).sqrt()
            };
            ArrivalEstimate {
                flight: id.clone(),
                mean,
                variance,
                half_width,
            }
        })
        .collect())
}
