//! Clearance optimization under sector congestion constraints.
//!
//! A decision picks one route per flight and a bounded mean shift for each
//! edge still ahead of the flight. The cost is `Σ |Â_f − A_f|^p` on expected
//! arrivals, and every (sector, slice) congestion probability must stay at
//! or below ε (hard mode) or pays `λ_c · Σ max(0, P − ε)` (soft mode).
//! Reroutes cost `λ_r` each.
//!
//! The search is a restarted (1+λ) evolution strategy: Gaussian steps on the
//! shifts with a success-rule step size, a snap-to-zero move that favours
//! sparse regulations, and route moves drawn in proportion to the
//! penalty-discounted benefit each alternative showed from the baseline.
//! The incumbent is then line-searched per shifted edge and offered swaps
//! between interchangeable flights.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::exec::Exec;
use crate::flight::{reroute, FlightId, FlightPlan, PointId, Propagator, TrajectoryBelief};
use crate::scenario::{estimate_congestion_with, sample_scenarios_with, SampleInput};
use crate::sector::{congestion_timeline_with, Sector, SectorTimeline, Slicing};

/// Objective differences below this are ties.
const TIE: f64 = 1e-9;
/// Best-cost changes below this do not reset the stall counter.
const STALL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Equity exponent of the delay cost.
    pub p: f64,
    pub epsilon: f64,
    pub constraint_mode: ConstraintMode,
    /// λ_c, soft-mode weight on congestion excess.
    pub soft_weight: f64,
    /// λ_r, cost per rerouted flight.
    pub reroute_penalty: f64,
    /// Weight on Σ Var[arrival]; zero leaves variance out of the objective.
    pub variance_weight: f64,
    /// Monte-Carlo scenarios per evaluation; 0 evaluates exactly.
    pub inner_samples: usize,
    pub stall_window: usize,
    pub max_iters: usize,
    /// Offspring per generation.
    pub offspring: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            p: 1.0,
            epsilon: 0.75,
            constraint_mode: ConstraintMode::Hard,
            soft_weight: 100.0,
            reroute_penalty: 10.0,
            variance_weight: 0.0,
            inner_samples: 0,
            stall_window: 40,
            max_iters: 400,
            offspring: 8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.p >= 1.0) {
            return bad(format!("equity exponent p must be ≥ 1, got {}", self.p));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        for (name, w) in [
            ("soft weight", self.soft_weight),
            ("reroute penalty", self.reroute_penalty),
            ("variance weight", self.variance_weight),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return bad(format!(
                    "{name} must be a finite nonnegative number, got {w}"
                ));
            }
        }
        if self.offspring == 0 || self.stall_window == 0 {
            return bad("offspring and stall window must be positive".into());
        }
        Ok(())
    }
}

/// `Σ |expected − scheduled|^p`.
pub fn delay_cost(expected: &[f64], scheduled: &[f64], p: f64) -> Result<f64> {
    if expected.len() != scheduled.len() {
        return Err(ModelError::LengthMismatch(expected.len(), scheduled.len()));
    }
    if !(p >= 1.0) {
        return Err(ModelError::InvalidConfig(format!("p must be ≥ 1, got {p}")));
    }
    Ok(expected
        .iter()
        .zip(scheduled)
        .map(|(e, s)| (e - s).abs().powf(p))
        .sum())
}

/// Immutable copy of the airspace the optimizer works on.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub plans: Vec<FlightPlan>,
    /// Current beliefs, carrying any observation history.
    pub beliefs: Vec<TrajectoryBelief>,
    pub sectors: Vec<Sector>,
    pub slicing: Slicing,
    pub propagator: Propagator,
}

impl Snapshot {
    /// Snapshot with unobserved flights.
    pub fn new(
        plans: Vec<FlightPlan>,
        sectors: Vec<Sector>,
        slicing: Slicing,
        propagator: Propagator,
    ) -> Result<Self> {
        let beliefs = plans
            .iter()
            .map(|p| propagator.propagate(p, &[]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Snapshot {
            plans,
            beliefs,
            sectors,
            slicing,
            propagator,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightDecision {
    pub flight: FlightId,
    pub route: usize,
    /// One mean shift per plan edge.
    pub shifts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub flights: Vec<FlightDecision>,
}

impl DecisionVector {
    /// Current routes, no shifts.
    pub fn zero(snapshot: &Snapshot) -> Self {
        DecisionVector {
            flights: snapshot
                .plans
                .iter()
                .map(|p| FlightDecision {
                    flight: p.id.clone(),
                    route: p.active_route,
                    shifts: vec![0.0; p.edges.len()],
                })
                .collect(),
        }
    }

    /// Number of decision variables: one route choice per flight plus one
    /// shift per edge.
    pub fn dimension(&self) -> usize {
        self.flights.iter().map(|f| 1 + f.shifts.len()).sum()
    }

    pub fn total_abs_shift(&self) -> f64 {
        self.flights
            .iter()
            .flat_map(|f| f.shifts.iter())
            .map(|d| d.abs())
            .sum()
    }
}

/// Target overflight time and ±3σ window at one metering point, clipped to
/// the times the model considers possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clearance {
    pub flight: FlightId,
    pub point: PointId,
    pub target: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub delay_cost: f64,
    /// Delay cost plus every penalty.
    pub objective: f64,
    pub penalty_total: f64,
    pub reroutes: usize,
    /// Σ max(0, P − ε).
    pub congestion_excess: f64,
    pub max_congestion: f64,
    pub feasible: bool,
    pub expected_arrivals: Vec<f64>,
    pub arrival_variances: Vec<f64>,
    pub timeline: SectorTimeline,
    pub clearances: Vec<Clearance>,
}

/// Evaluates a decision on the snapshot.
pub fn evaluate(
    decision: &DecisionVector,
    snapshot: &Snapshot,
    config: &OptimizerConfig,
) -> Result<EvaluationReport> {
    if decision.flights.len() != snapshot.plans.len() {
        return Err(ModelError::LengthMismatch(
            decision.flights.len(),
            snapshot.plans.len(),
        ));
    }
    let mut plans = Vec::with_capacity(snapshot.plans.len());
    let mut reroutes = 0;
    for (plan, d) in snapshot.plans.iter().zip(&decision.flights) {
        if d.flight != plan.id {
            return Err(ModelError::UnknownFlight(d.flight.clone()));
        }
        plan.check_shifts(&d.shifts)?;
        let next = reroute(plan, d.route)?;
        if d.route != plan.active_route {
            reroutes += 1;
        }
        plans.push(next);
    }

    let epsilon = config.epsilon;
    let (arrivals, variances, timeline, clearances) = if config.inner_samples == 0 {
        let beliefs = plans
            .iter()
            .zip(&snapshot.beliefs)
            .zip(&decision.flights)
            .map(|((plan, prior), d)| snapshot.propagator.repropagate(plan, prior, &d.shifts))
            .collect::<Result<Vec<_>>>()?;
        let timeline = congestion_timeline_with(
            Exec::Sequential,
            &beliefs,
            &snapshot.sectors,
            &snapshot.slicing,
            epsilon,
        );
        let arrivals = beliefs.iter().map(|b| b.arrival().expectation()).collect();
        let variances = beliefs.iter().map(|b| b.arrival().variance()).collect();
        let clearances = beliefs
            .iter()
            .flat_map(|b| {
                b.points.iter().zip(&b.overflight).map(move |(point, pdf)| {
                    let (mean, sd) = (pdf.expectation(), pdf.std_dev());
                    let (lo, hi) = pdf.support();
                    Clearance {
                        flight: b.flight.clone(),
                        point: point.clone(),
                        target: mean,
                        lower: (mean - 3.0 * sd).max(lo),
                        upper: (mean + 3.0 * sd).min(hi),
                    }
                })
            })
            .collect();
        (arrivals, variances, timeline, clearances)
    } else {
        let inputs: Vec<SampleInput<'_>> = plans
            .iter()
            .zip(&snapshot.beliefs)
            .zip(&decision.flights)
            .map(|((plan, prior), d)| SampleInput {
                plan,
                shifts: &d.shifts,
                anchor: prior.anchor.as_ref(),
            })
            .collect();
        let set =
            sample_scenarios_with(Exec::Sequential, &inputs, config.inner_samples, config.seed)?;
        let est = estimate_congestion_with(
            Exec::Sequential,
            &set,
            &snapshot.sectors,
            &snapshot.slicing,
            epsilon,
        );
        let m = set.len() as f64;
        let mut arrivals = Vec::new();
        let mut variances = Vec::new();
        let mut clearances = Vec::new();
        for (f, id) in set.flight_ids.iter().enumerate() {
            for (i, point) in set.routes[f].iter().enumerate() {
                let mean = set
                    .scenarios
                    .iter()
                    .map(|s| s.flights[f].times[i])
                    .sum::<f64>()
                    / m;
                let var = if set.len() > 1 {
                    set.scenarios
                        .iter()
                        .map(|s| (s.flights[f].times[i] - mean).powi(2))
                        .sum::<f64>()
                        / (m - 1.0)
                } else {
                    0.0
                };
                let sd = var.sqrt();
                let (lo, hi) = set
                    .scenarios
                    .iter()
                    .map(|s| s.flights[f].times[i])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| {
                        (a.min(t), b.max(t))
                    });
                clearances.push(Clearance {
                    flight: id.clone(),
                    point: point.clone(),
                    target: mean,
                    lower: (mean - 3.0 * sd).max(lo),
                    upper: (mean + 3.0 * sd).min(hi),
                });
                if i + 1 == set.routes[f].len() {
                    arrivals.push(mean);
                    variances.push(var);
                }
            }
        }
        (arrivals, variances, est.timeline, clearances)
    };

    let scheduled: Vec<f64> = plans.iter().map(|p| p.scheduled_arrival).collect();
    let delay = delay_cost(&arrivals, &scheduled, config.p)?;
    let excess = timeline.excess();
    let max_congestion = timeline.max_probability();
    let feasible = timeline
        .entries
        .iter()
        .all(|e| e.congestion_probability <= epsilon);
    let mut penalty = config.reroute_penalty * reroutes as f64
        + config.variance_weight * variances.iter().sum::<f64>();
    if config.constraint_mode == ConstraintMode::Soft {
        penalty += config.soft_weight * excess;
    }
    Ok(EvaluationReport {
        delay_cost: delay,
        objective: delay + penalty,
        penalty_total: penalty,
        reroutes,
        congestion_excess: excess,
        max_congestion,
        feasible,
        expected_arrivals: arrivals,
        arrival_variances: variances,
        timeline,
        clearances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeStatus {
    Feasible,
    /// Hard mode found no decision meeting every congestion threshold.
    NoFeasibleSolution,
    /// Soft mode result that still exceeds ε somewhere.
    SoftViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub best_objective: f64,
    pub best_feasible: bool,
    pub best_excess: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub status: OptimizeStatus,
    pub decision: DecisionVector,
    pub report: EvaluationReport,
    pub baseline: EvaluationReport,
    pub history: Vec<HistoryEntry>,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    decision: DecisionVector,
    report: EvaluationReport,
}

struct FlightSpace {
    /// Routes that keep the flight's observation history valid.
    routes: Vec<usize>,
    /// Shiftable edge indices per plan route.
    mutable: Vec<Vec<usize>>,
    ranges: Vec<(f64, f64)>,
    route_weights: Vec<f64>,
    route_rate: f64,
}

struct Search<'a> {
    snapshot: &'a Snapshot,
    config: &'a OptimizerConfig,
    exec: Exec,
    space: Vec<FlightSpace>,
    /// Position of each flight in id order.
    rank: Vec<usize>,
    evaluations: usize,
}

impl<'a> Search<'a> {
    fn new(snapshot: &'a Snapshot, config: &'a OptimizerConfig, exec: Exec) -> Self {
        let space = snapshot
            .plans
            .iter()
            .zip(&snapshot.beliefs)
            .map(|(plan, belief)| {
                let anchor_point = belief.anchor.as_ref().map(|a| a.point.as_str());
                let ranges: Vec<(f64, f64)> = plan.edges.iter().map(|e| e.shift_range()).collect();
                let mut routes = Vec::new();
                let mut mutable = vec![Vec::new(); plan.routes.len()];
                for (r, points) in plan.routes.iter().enumerate() {
                    let start = match anchor_point {
                        Some(a) => match points.iter().position(|p| p == a) {
                            Some(i) => i,
                            None => continue,
                        },
                        None => 0,
                    };
                    routes.push(r);
                    mutable[r] = plan
                        .route_edges(r)
                        .into_iter()
                        .skip(start)
                        .filter(|&e| ranges[e].1 - ranges[e].0 > 1e-12)
                        .collect();
                }
                FlightSpace {
                    routes,
                    mutable,
                    ranges,
                    route_weights: vec![1.0; plan.routes.len()],
                    route_rate: 0.0,
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..snapshot.plans.len()).collect();
        order.sort_by(|&a, &b| snapshot.plans[a].id.cmp(&snapshot.plans[b].id));
        let mut rank = vec![0; order.len()];
        for (r, &f) in order.iter().enumerate() {
            rank[f] = r;
        }
        Search {
            snapshot,
            config,
            exec,
            space,
            rank,
            evaluations: 0,
        }
    }

    fn canonicalize(&self, d: &mut DecisionVector) {
        for (f, fd) in d.flights.iter_mut().enumerate() {
            let keep = &self.space[f].mutable[fd.route];
            for (e, s) in fd.shifts.iter_mut().enumerate() {
                if !keep.contains(&e) {
                    *s = 0.0;
                } else {
                    let (lo, hi) = self.space[f].ranges[e];
                    *s = s.clamp(lo, hi);
                }
            }
        }
    }

    fn evaluate_all(&mut self, decisions: Vec<DecisionVector>) -> Vec<Option<Candidate>> {
        self.evaluations += decisions.len();
        let (snapshot, config) = (self.snapshot, self.config);
        self.exec.map_slice(&decisions, |d| {
            evaluate(d, snapshot, config).ok().map(|report| Candidate {
                decision: d.clone(),
                report,
            })
        })
    }

    fn evaluate_one(&mut self, d: DecisionVector) -> Option<Candidate> {
        self.evaluate_all(vec![d]).pop().flatten()
    }

    /// Scalar used for route benefits and line searches; lower is better.
    fn merit(&self, r: &EvaluationReport) -> f64 {
        match self.config.constraint_mode {
            ConstraintMode::Soft => r.objective,
            ConstraintMode::Hard if r.feasible => r.objective,
            ConstraintMode::Hard => 1e6 * (1.0 + r.congestion_excess) + r.objective,
        }
    }

    fn regulation_key(&self, d: &DecisionVector) -> (bool, usize, f64) {
        let first = d
            .flights
            .iter()
            .enumerate()
            .filter(|(f, fd)| {
                fd.route != self.snapshot.plans[*f].active_route
                    || fd.shifts.iter().any(|s| *s != 0.0)
            })
            .map(|(f, _)| self.rank[f])
            .min();
        (
            first.is_some(),
            first.unwrap_or(usize::MAX),
            d.total_abs_shift(),
        )
    }

    /// Total order on candidates: feasibility (hard mode), then objective,
    /// then unregulated before regulated, lowest regulated flight id, and
    /// smallest total shift.
    fn compare(&self, a: &Candidate, b: &Candidate) -> Ordering {
        if self.config.constraint_mode == ConstraintMode::Hard {
            match (a.report.feasible, b.report.feasible) {
                (true, false) => return Ordering::Less,
                (false, true) => return Ordering::Greater,
                (false, false) => {
                    let d = a.report.congestion_excess - b.report.congestion_excess;
                    if d.abs() > TIE {
                        return d.total_cmp(&0.0);
                    }
                }
                (true, true) => {}
            }
        }
        let d = a.report.objective - b.report.objective;
        if d.abs() > TIE {
            return d.total_cmp(&0.0);
        }
        let (ka, kb) = (
            self.regulation_key(&a.decision),
            self.regulation_key(&b.decision),
        );
        ka.0.cmp(&kb.0)
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
    }

    fn pick_best(&self, cands: Vec<Option<Candidate>>) -> Option<Candidate> {
        cands
            .into_iter()
            .flatten()
            .fold(None, |best, c| match best {
                None => Some(c),
                Some(b) if self.compare(&c, &b) == Ordering::Less => Some(c),
                keep => keep,
            })
    }

    /// Single-flight reroutes from the baseline set the route-move odds.
    fn learn_route_weights(&mut self, baseline: &Candidate) {
        let mut trials = Vec::new();
        for (f, fs) in self.space.iter().enumerate() {
            for &r in &fs.routes {
                if r != baseline.decision.flights[f].route {
                    let mut d = baseline.decision.clone();
                    d.flights[f].route = r;
                    trials.push((f, r, d));
                }
            }
        }
        let decisions = trials.iter().map(|t| t.2.clone()).collect();
        let results = self.evaluate_all(decisions);
        let base = self.merit(&baseline.report);
        for ((f, r, _), res) in trials.into_iter().zip(results) {
            let benefit = res.map(|c| base - self.merit(&c.report)).unwrap_or(0.0);
            self.space[f].route_weights[r] = benefit.max(0.0) + 1e-3;
        }
        for (f, fs) in self.space.iter_mut().enumerate() {
            if fs.routes.len() < 2 {
                continue;
            }
            let current = baseline.decision.flights[f].route;
            let best = fs
                .routes
                .iter()
                .filter(|&&r| r != current)
                .map(|&r| fs.route_weights[r] - 1e-3)
                .fold(0.0, f64::max);
            fs.route_weights[current] = 1.0;
            fs.route_rate = 0.05 + 0.25 * best / (best + 1.0);
        }
    }

    fn mutate(&self, parent: &DecisionVector, sigma: f64, rng: &mut ChaCha8Rng) -> DecisionVector {
        let mut d = parent.clone();
        for (f, fs) in self.space.iter().enumerate() {
            if fs.routes.len() > 1 && rng.random::<f64>() < fs.route_rate {
                let current = d.flights[f].route;
                let options: Vec<usize> = fs
                    .routes
                    .iter()
                    .copied()
                    .filter(|&r| r != current)
                    .collect();
                let total: f64 = options.iter().map(|&r| fs.route_weights[r]).sum();
                let mut pick = rng.random::<f64>() * total;
                for &r in &options {
                    pick -= fs.route_weights[r];
                    if pick <= 0.0 {
                        d.flights[f].route = r;
                        break;
                    }
                }
            }
        }
        let coords: Vec<(usize, usize)> = d
            .flights
            .iter()
            .enumerate()
            .flat_map(|(f, fd)| self.space[f].mutable[fd.route].iter().map(move |&e| (f, e)))
            .collect();
        if !coords.is_empty() {
            let rate = (2.0 / coords.len() as f64).min(1.0);
            let mut touched = false;
            for &(f, e) in &coords {
                if rng.random::<f64>() < rate {
                    self.step(&mut d, f, e, sigma, rng);
                    touched = true;
                }
            }
            if !touched {
                let (f, e) = coords[rng.random_range(0..coords.len())];
                self.step(&mut d, f, e, sigma, rng);
            }
        }
        self.canonicalize(&mut d);
        d
    }

    fn step(&self, d: &mut DecisionVector, f: usize, e: usize, sigma: f64, rng: &mut ChaCha8Rng) {
        let (lo, hi) = self.space[f].ranges[e];
        let s = &mut d.flights[f].shifts[e];
        if rng.random::<f64>() < 0.15 {
            *s = 0.0f64.clamp(lo, hi);
        } else {
            let z: f64 = rng.sample(StandardNormal);
            *s = (*s + sigma * (hi - lo) * z).clamp(lo, hi);
        }
    }

    fn random_start(&self, around: &DecisionVector, rng: &mut ChaCha8Rng) -> DecisionVector {
        let mut d = around.clone();
        for (f, fs) in self.space.iter().enumerate() {
            if fs.routes.len() > 1 && rng.random::<f64>() < 0.2 {
                d.flights[f].route = fs.routes[rng.random_range(0..fs.routes.len())];
            }
            let route = d.flights[f].route;
            for &e in &fs.mutable[route] {
                let (lo, hi) = fs.ranges[e];
                d.flights[f].shifts[e] = if rng.random::<f64>() < 0.5 {
                    0.0f64.clamp(lo, hi)
                } else {
                    rng.random_range(lo..=hi)
                };
            }
        }
        self.canonicalize(&mut d);
        d
    }

    /// Golden-section search on each shifted edge of the incumbent.
    fn polish(&mut self, mut best: Candidate) -> Candidate {
        const INV_PHI: f64 = 0.618_033_988_749_895;
        for _pass in 0..2 {
            let coords: Vec<(usize, usize)> = best
                .decision
                .flights
                .iter()
                .enumerate()
                .flat_map(|(f, fd)| {
                    fd.shifts
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| **s != 0.0)
                        .map(move |(e, _)| (f, e))
                })
                .collect();
            for (f, e) in coords {
                let (mut a, mut b) = self.space[f].ranges[e];
                let with = |s: f64, base: &DecisionVector| {
                    let mut d = base.clone();
                    d.flights[f].shifts[e] = s;
                    d
                };
                let anchor = best.decision.clone();
                let mut local = best.clone();
                let probe = |s: f64, this: &mut Self, local: &mut Candidate| -> f64 {
                    match this.evaluate_one(with(s, &anchor)) {
                        Some(c) => {
                            let m = this.merit(&c.report);
                            if this.compare(&c, local) == Ordering::Less {
                                *local = c;
                            }
                            m
                        }
                        None => f64::INFINITY,
                    }
                };
                let mut x1 = b - INV_PHI * (b - a);
                let mut x2 = a + INV_PHI * (b - a);
                let mut f1 = probe(x1, self, &mut local);
                let mut f2 = probe(x2, self, &mut local);
                for _ in 0..60 {
                    if b - a < 1e-10 * (1.0 + b.abs()) {
                        break;
                    }
                    if f1 <= f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - INV_PHI * (b - a);
                        f1 = probe(x1, self, &mut local);
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + INV_PHI * (b - a);
                        f2 = probe(x2, self, &mut local);
                    }
                }
                // Hard-constraint boundaries sit at the right end of the bracket.
                probe(b, self, &mut local);
                probe(
                    0.0f64.clamp(self.space[f].ranges[e].0, self.space[f].ranges[e].1),
                    self,
                    &mut local,
                );
                best = local;
            }
        }
        best
    }

    /// Offers the decision of each flight to every lower-id flight with an
    /// identical plan.
    fn try_swaps(&mut self, mut best: Candidate) -> Candidate {
        let n = self.snapshot.plans.len();
        for f in 0..n {
            for g in 0..n {
                if self.rank[g] >= self.rank[f] {
                    continue;
                }
                let (pf, pg) = (&self.snapshot.plans[f], &self.snapshot.plans[g]);
                let same = pf.edges == pg.edges
                    && pf.routes == pg.routes
                    && pf.active_route == pg.active_route;
                if !same || best.decision.flights[f] == best.decision.flights[g] {
                    continue;
                }
                let mut d = best.decision.clone();
                let (rf, sf) = (d.flights[f].route, d.flights[f].shifts.clone());
                d.flights[f].route = d.flights[g].route;
                d.flights[f].shifts = d.flights[g].shifts.clone();
                d.flights[g].route = rf;
                d.flights[g].shifts = sf;
                self.canonicalize(&mut d);
                if let Some(c) = self.evaluate_one(d) {
                    if self.compare(&c, &best) == Ordering::Less {
                        best = c;
                    }
                }
            }
        }
        best
    }

    fn history_entry(&self, iteration: usize, c: &Candidate) -> HistoryEntry {
        HistoryEntry {
            iteration,
            best_objective: c.report.objective,
            best_feasible: c.report.feasible,
            best_excess: c.report.congestion_excess,
        }
    }
}

/// Searches for the best decision on `snapshot`.
pub fn optimize(snapshot: &Snapshot, config: &OptimizerConfig) -> Result<OptimizeResult> {
    optimize_with(Exec::default(), snapshot, config)
}

pub fn optimize_with(
    exec: Exec,
    snapshot: &Snapshot,
    config: &OptimizerConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    let mut search = Search::new(snapshot, config, exec);
    let zero = DecisionVector::zero(snapshot);
    let baseline = Candidate {
        report: evaluate(&zero, snapshot, config)?,
        decision: zero,
    };
    search.evaluations += 1;

    let mut history = vec![search.history_entry(0, &baseline)];
    let mut best = baseline.clone();
    let has_freedom = search
        .space
        .iter()
        .zip(&baseline.decision.flights)
        .any(|(fs, fd)| fs.routes.len() > 1 || !fs.mutable[fd.route].is_empty());
    let needs_search = match config.constraint_mode {
        ConstraintMode::Hard => !baseline.report.feasible || baseline.report.objective > 0.0,
        ConstraintMode::Soft => baseline.report.objective > 0.0,
    };

    if has_freedom && needs_search {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        search.learn_route_weights(&baseline);
        let mut parent = baseline.clone();
        let mut sigma: f64 = 0.3;
        let mut stall = 0;
        for it in 1..=config.max_iters {
            let kids: Vec<DecisionVector> = (0..config.offspring)
                .map(|_| search.mutate(&parent.decision, sigma, &mut rng))
                .collect();
            let evaluated = search.evaluate_all(kids);
            if let Some(champ) = search.pick_best(evaluated) {
                if search.compare(&champ, &parent) == Ordering::Less {
                    parent = champ;
                    sigma = (sigma * 1.5).min(1.0);
                } else {
                    sigma *= 0.82;
                }
            } else {
                sigma *= 0.82;
            }
            if search.compare(&parent, &best) == Ordering::Less {
                let gain = search.merit(&best.report) - search.merit(&parent.report);
                best = parent.clone();
                stall = if gain > STALL_TOLERANCE { 0 } else { stall + 1 };
            } else {
                stall += 1;
            }
            history.push(search.history_entry(it, &best));
            if stall >= config.stall_window {
                break;
            }
            if sigma < 1e-3 {
                let start = search.random_start(&best.decision, &mut rng);
                if let Some(c) = search.evaluate_one(start) {
                    parent = c;
                }
                sigma = 0.3;
            }
        }
        let polished = search.polish(best.clone());
        let swapped = search.try_swaps(polished);
        if search.compare(&swapped, &best) == Ordering::Less {
            best = swapped;
            let last = history.last().map(|h| h.iteration + 1).unwrap_or(0);
            history.push(search.history_entry(last, &best));
        }
    }

    let status = match (config.constraint_mode, best.report.feasible) {
        (_, true) => OptimizeStatus::Feasible,
        (ConstraintMode::Hard, false) => OptimizeStatus::NoFeasibleSolution,
        (ConstraintMode::Soft, false) => OptimizeStatus::SoftViolation,
    };
    Ok(OptimizeResult {
        status,
        decision: best.decision,
        report: best.report,
        baseline: baseline.report,
        history,
        evaluations: search.evaluations,
    })
}
