//! Observation replay and the closed monitoring loop.
//!
//! Events are processed in timestamp order by a single writer. After each
//! batch the optimizer either re-runs on a snapshot or re-evaluates the
//! standing decision, and the resulting clearances carry the state version
//! they were computed from.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::flight::{
    cdf_distance, reroute, FlightId, FlightPlan, PointId, Propagator, TrajectoryBelief,
};
use crate::optimizer::{
    evaluate, optimize, Clearance, DecisionVector, OptimizeStatus, OptimizerConfig, Snapshot,
};
use crate::sector::{congestion_timeline, Sector, SectorTimeline, Slicing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Overflight,
    Departure,
    Diversion { route_index: usize },
}

/// One line of an observation stream.
///
/// ```json
/// {"timestamp": 0, "flight": "F1", "kind": "departure", "observed_time": 0}
/// {"timestamp": 12, "flight": "F1", "kind": "overflight", "point": "2", "observed_time": 11.5}
/// {"timestamp": 13, "flight": "F1", "kind": "diversion", "route_index": 1}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub timestamp: f64,
    pub flight: FlightId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PointId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_time: Option<f64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl ObservationEvent {
    pub fn departure(timestamp: f64, flight: &str, t: f64) -> Self {
        ObservationEvent {
            timestamp,
            flight: flight.into(),
            point: None,
            observed_time: Some(t),
            kind: EventKind::Departure,
        }
    }

    pub fn overflight(timestamp: f64, flight: &str, point: &str, t: f64) -> Self {
        ObservationEvent {
            timestamp,
            flight: flight.into(),
            point: Some(point.into()),
            observed_time: Some(t),
            kind: EventKind::Overflight,
        }
    }

    pub fn diversion(timestamp: f64, flight: &str, route_index: usize) -> Self {
        ObservationEvent {
            timestamp,
            flight: flight.into(),
            point: None,
            observed_time: None,
            kind: EventKind::Diversion { route_index },
        }
    }
}

/// Current situation: plans, beliefs and everything observed so far.
#[derive(Debug, Clone)]
pub struct AirspaceState {
    initial_plans: Vec<FlightPlan>,
    pub plans: Vec<FlightPlan>,
    pub beliefs: Vec<TrajectoryBelief>,
    pub log: Vec<ObservationEvent>,
    pub version: u64,
    pub propagator: Propagator,
}

impl AirspaceState {
    pub fn new(plans: Vec<FlightPlan>, propagator: Propagator) -> Result<Self> {
        let beliefs = plans
            .iter()
            .map(|p| propagator.propagate(p, &[]))
            .collect::<Result<Vec<_>>>()?;
        Ok(AirspaceState {
            initial_plans: plans.clone(),
            plans,
            beliefs,
            log: Vec::new(),
            version: 0,
            propagator,
        })
    }

    fn flight_index(&self, id: &str) -> Result<usize> {
        self.plans
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| ModelError::UnknownFlight(id.to_string()))
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.log.last().map(|e| e.timestamp)
    }

    /// Applies one event, returning the next state.
    pub fn ingest(&self, event: &ObservationEvent) -> Result<AirspaceState> {
        let mut next = self.clone();
        next.apply(event)?;
        Ok(next)
    }

    /// In-place [`ingest`](Self::ingest); leaves the state untouched on error.
    pub fn apply(&mut self, event: &ObservationEvent) -> Result<()> {
        if !event.timestamp.is_finite() {
            return Err(ModelError::MalformedEvent("timestamp is not finite".into()));
        }
        if let Some(last) = self.last_timestamp() {
            if event.timestamp < last {
                return Err(ModelError::OutOfOrderEvent {
                    timestamp: event.timestamp,
                    last,
                });
            }
        }
        let f = self.flight_index(&event.flight)?;
        let plan = &self.plans[f];
        let belief = &self.beliefs[f];
        let observed = |what: &str| {
            event.observed_time.ok_or_else(|| {
                ModelError::MalformedEvent(format!("{what} event without observed_time"))
            })
        };
        let (plan, belief) = match &event.kind {
            EventKind::Departure => {
                let origin = plan.active_points()[0].clone();
                if let Some(p) = &event.point {
                    if *p != origin {
                        return Err(ModelError::MalformedEvent(format!(
                            "departure of {} reported at {p}, not at origin {origin}",
                            plan.id
                        )));
                    }
                }
                let b = self
                    .propagator
                    .observe(plan, belief, &origin, observed("departure")?)?;
                (plan.clone(), b)
            }
            EventKind::Overflight => {
                let point = event.point.as_deref().ok_or_else(|| {
                    ModelError::MalformedEvent("overflight event without point".into())
                })?;
                let b = self
                    .propagator
                    .observe(plan, belief, point, observed("overflight")?)?;
                (plan.clone(), b)
            }
            EventKind::Diversion { route_index } => {
                let new_plan = reroute(plan, *route_index)?;
                let mut b = self.propagator.repropagate(&new_plan, belief, &[])?;
                if let (Some(point), Some(t)) = (&event.point, event.observed_time) {
                    b = self.propagator.observe(&new_plan, &b, point, t)?;
                }
                (new_plan, b)
            }
        };
        self.plans[f] = plan;
        self.beliefs[f] = belief;
        self.log.push(event.clone());
        self.version += 1;
        Ok(())
    }

    /// Rebuilds the state from the initial plans and the observation log.
    pub fn recompute(&self) -> Result<AirspaceState> {
        let mut fresh = AirspaceState::new(self.initial_plans.clone(), self.propagator.clone())?;
        for e in &self.log {
            fresh.apply(e)?;
        }
        Ok(fresh)
    }

    /// Largest CDF difference between this state's beliefs and `other`'s.
    pub fn max_belief_difference(&self, other: &AirspaceState) -> f64 {
        if self.beliefs.len() != other.beliefs.len() {
            return f64::INFINITY;
        }
        self.beliefs
            .iter()
            .zip(&other.beliefs)
            .map(|(a, b)| a.max_cdf_difference(b))
            .fold(0.0, f64::max)
    }

    pub fn snapshot(&self, sectors: &[Sector], slicing: &Slicing) -> Snapshot {
        Snapshot {
            plans: self.plans.clone(),
            beliefs: self.beliefs.clone(),
            sectors: sectors.to_vec(),
            slicing: *slicing,
            propagator: self.propagator.clone(),
        }
    }

    pub fn congestion(
        &self,
        sectors: &[Sector],
        slicing: &Slicing,
        epsilon: f64,
    ) -> SectorTimeline {
        congestion_timeline(&self.beliefs, sectors, slicing, epsilon)
    }
}

/// When the loop re-runs the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReoptimizePolicy {
    /// Events whose timestamps fall within this many minutes of a batch's
    /// first event join that batch.
    pub batch_window: f64,
    /// Change in a flagged slice's congestion probability that triggers a run.
    pub change_threshold: f64,
    /// Minutes between runs when nothing else triggers one.
    pub interval: f64,
    /// Stop at the first rejected event instead of reporting it and going on.
    pub strict: bool,
}

impl Default for ReoptimizePolicy {
    fn default() -> Self {
        ReoptimizePolicy {
            batch_window: 0.0,
            change_threshold: 0.05,
            interval: 15.0,
            strict: false,
        }
    }
}

/// An event with the line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcedEvent {
    pub line: usize,
    pub event: ObservationEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventError {
    pub line: usize,
    pub message: String,
}

/// One emitted clearance update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopStep {
    /// State version the clearances derive from.
    pub version: u64,
    pub timestamp: Option<f64>,
    pub events: usize,
    pub reoptimized: bool,
    pub status: OptimizeStatus,
    pub delay_cost: f64,
    pub objective: f64,
    pub max_congestion: f64,
    pub flagged: Vec<(String, f64, f64)>,
    pub errors: Vec<EventError>,
    pub clearances: Vec<Clearance>,
}

/// Everything the loop needs besides the state and events.
#[derive(Debug, Clone)]
pub struct LoopSetup {
    pub sectors: Vec<Sector>,
    pub slicing: Slicing,
    pub optimizer: OptimizerConfig,
    pub policy: ReoptimizePolicy,
}

/// Replays `events` against `state`, calling `emit` after the initial pass
/// and after every batch.
pub fn run_loop(
    mut state: AirspaceState,
    events: &[SourcedEvent],
    setup: &LoopSetup,
    mut emit: impl FnMut(&AirspaceState, &LoopStep),
) -> Result<AirspaceState> {
    let LoopSetup {
        sectors,
        slicing,
        optimizer,
        policy,
    } = setup;
    let eps = optimizer.epsilon;

    let snap = state.snapshot(sectors, slicing);
    let first = optimize(&snap, optimizer)?;
    let mut decision = first.decision.clone();
    let mut reference = state.congestion(sectors, slicing, eps);
    let mut last_run: Option<f64> = None;
    let step = |state: &AirspaceState,
                ts: Option<f64>,
                n: usize,
                reopt: bool,
                status: OptimizeStatus,
                report: &crate::optimizer::EvaluationReport,
                errors: Vec<EventError>| LoopStep {
        version: state.version,
        timestamp: ts,
        events: n,
        reoptimized: reopt,
        status,
        delay_cost: report.delay_cost,
        objective: report.objective,
        max_congestion: report.max_congestion,
        flagged: report
            .timeline
            .flagged()
            .map(|e| (e.sector_id.clone(), e.t0, e.t1))
            .collect(),
        errors,
        clearances: report.clearances.clone(),
    };
    emit(
        &state,
        &step(
            &state,
            None,
            0,
            true,
            first.status,
            &first.report,
            Vec::new(),
        ),
    );

    let mut i = 0;
    while i < events.len() {
        let start = events[i].event.timestamp;
        let mut j = i;
        let mut errors = Vec::new();
        let mut diverted = false;
        while j < events.len() && events[j].event.timestamp <= start + policy.batch_window {
            let se = &events[j];
            match state.apply(&se.event) {
                Ok(()) => diverted |= matches!(se.event.kind, EventKind::Diversion { .. }),
                Err(e) if policy.strict => return Err(e),
                Err(e) => errors.push(EventError {
                    line: se.line,
                    message: e.to_string(),
                }),
            }
            j += 1;
        }
        let ts = events[j - 1].event.timestamp;
        let now = state.congestion(sectors, slicing, eps);
        let changed = now.entries.iter().zip(&reference.entries).any(|(a, b)| {
            (a.flagged || b.flagged)
                && (a.congestion_probability - b.congestion_probability).abs()
                    > policy.change_threshold
        });
        let due = last_run.is_none_or(|t| ts - t >= policy.interval);
        let snap = state.snapshot(sectors, slicing);
        let standing = if diverted || changed || due {
            None
        } else {
            evaluate(&decision, &snap, optimizer).ok()
        };
        let emitted = match standing {
            Some(report) => {
                let status = if report.feasible {
                    OptimizeStatus::Feasible
                } else {
                    match optimizer.constraint_mode {
                        crate::optimizer::ConstraintMode::Hard => {
                            OptimizeStatus::NoFeasibleSolution
                        }
                        crate::optimizer::ConstraintMode::Soft => OptimizeStatus::SoftViolation,
                    }
                };
                step(&state, Some(ts), j - i, false, status, &report, errors)
            }
            None => {
                let res = optimize(&snap, optimizer)?;
                decision = res.decision.clone();
                reference = now;
                last_run = Some(ts);
                step(
                    &state,
                    Some(ts),
                    j - i,
                    true,
                    res.status,
                    &res.report,
                    errors,
                )
            }
        };
        emit(&state, &emitted);
        i = j;
    }
    Ok(state)
}

/// Decision vector that leaves every flight as monitored.
pub fn baseline_decision(
    state: &AirspaceState,
    sectors: &[Sector],
    slicing: &Slicing,
) -> DecisionVector {
    DecisionVector::zero(&state.snapshot(sectors, slicing))
}

/// Largest CDF distance between two beliefs of the same flight.
pub fn belief_distance(a: &TrajectoryBelief, b: &TrajectoryBelief) -> f64 {
    a.overflight
        .iter()
        .zip(&b.overflight)
        .map(|(x, y)| cdf_distance(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flight::tests::{edge, table_plan};
    use crate::sector::Gate;

    fn toy_state() -> AirspaceState {
        AirspaceState::new(
            vec![table_plan("F1"), table_plan("F2")],
            Propagator::default(),
        )
        .unwrap()
    }

    fn toy_setup() -> LoopSetup {
        LoopSetup {
            sectors: vec![Sector {
                id: "S1".into(),
                capacity: 1,
                gates: vec![Gate {
                    entry: "2".into(),
                    exit: "3".into(),
                }],
            }],
            slicing: Slicing::new(0.0, 10.0, 60.0).unwrap(),
            optimizer: OptimizerConfig::default(),
            policy: ReoptimizePolicy::default(),
        }
    }

    #[test]
    fn departure_observation_shrinks_uncertainty() {
        let s = toy_state();
        let next = s
            .ingest(&ObservationEvent::departure(0.0, "F1", 0.0))
            .unwrap();
        let arr = next.beliefs[0].arrival();
        assert!((arr.expectation() - 43.5).abs() < 1e-9);
        assert!((arr.variance() - 65.0 / 12.0).abs() < 1e-9);
        assert_eq!(next.version, 1);
        assert!(next.max_belief_difference(&next.recompute().unwrap()) < 1e-9);
    }

    #[test]
    fn repeated_observation_only_bumps_version() {
        let s = toy_state()
            .ingest(&ObservationEvent::departure(0.0, "F1", 0.0))
            .unwrap();
        let again = s
            .ingest(&ObservationEvent::departure(1.0, "F1", 0.0))
            .unwrap();
        assert_eq!(again.version, s.version + 1);
        assert_eq!(again.beliefs, s.beliefs);
    }

    #[test]
    fn overflight_variance_is_nonincreasing() {
        let mut s = toy_state();
        let mut var = s.beliefs[0].arrival().variance();
        for (ts, point, t) in [
            (0.0, "1", 1.0),
            (12.0, "2", 12.0),
            (30.0, "3", 29.0),
            (44.0, "4", 44.0),
        ] {
            s = s
                .ingest(&ObservationEvent::overflight(ts, "F1", point, t))
                .unwrap();
            let v = s.beliefs[0].arrival().variance();
            assert!(v < var || (v == 0.0 && var == 0.0));
            var = v;
        }
        assert_eq!(var, 0.0);
    }

    #[test]
    fn ingest_errors() {
        let s = toy_state()
            .ingest(&ObservationEvent::departure(5.0, "F1", 0.0))
            .unwrap();
        assert!(matches!(
            s.ingest(&ObservationEvent::departure(4.0, "F2", 0.0)),
            Err(ModelError::OutOfOrderEvent { .. })
        ));
        assert!(matches!(
            s.ingest(&ObservationEvent::departure(6.0, "F9", 0.0)),
            Err(ModelError::UnknownFlight(_))
        ));
        assert!(matches!(
            s.ingest(&ObservationEvent::overflight(6.0, "F1", "7", 3.0)),
            Err(ModelError::PointNotOnRoute { .. })
        ));
        let mut missing = ObservationEvent::overflight(6.0, "F1", "2", 3.0);
        missing.observed_time = None;
        assert!(matches!(
            s.ingest(&missing),
            Err(ModelError::MalformedEvent(_))
        ));
    }

    #[test]
    fn diversion_then_overflight_on_new_route() {
        let mut plan = table_plan("F1");
        plan.edges.push(edge("2", "5", 20.0, 30.0, 5.0));
        plan.edges.push(edge("5", "4", 10.0, 14.0, 5.0));
        plan.routes
            .push(vec!["1".into(), "2".into(), "5".into(), "4".into()]);
        let s = AirspaceState::new(vec![plan.clone()], Propagator::default()).unwrap();
        let s = s
            .ingest(&ObservationEvent::departure(0.0, "F1", 0.0))
            .unwrap();
        let s = s
            .ingest(&ObservationEvent::diversion(5.0, "F1", 1))
            .unwrap();
        let s = s
            .ingest(&ObservationEvent::overflight(30.0, "F1", "5", 36.0))
            .unwrap();

        let p = Propagator::default();
        let direct_plan = reroute(&plan, 1).unwrap();
        let direct = p.propagate(&direct_plan, &[]).unwrap();
        let direct = p.observe(&direct_plan, &direct, "1", 0.0).unwrap();
        let direct = p.observe(&direct_plan, &direct, "5", 36.0).unwrap();
        assert!(belief_distance(&s.beliefs[0], &direct) < 1e-12);
        assert_eq!(s.beliefs[0].anchor.as_ref().unwrap().point, "5");
        assert!(s.max_belief_difference(&s.recompute().unwrap()) < 1e-9);

        // an observation off the new route is surfaced
        assert!(s
            .ingest(&ObservationEvent::overflight(31.0, "F1", "3", 30.0))
            .is_err());
    }

    #[test]
    fn event_json_round_trip() {
        let line = r#"{"timestamp":13,"flight":"F1","kind":"diversion","route_index":1}"#;
        let e: ObservationEvent = serde_json::from_str(line).unwrap();
        assert_eq!(e, ObservationEvent::diversion(13.0, "F1", 1));
        let line = r#"{"timestamp":0,"flight":"F1","kind":"departure","observed_time":2.5}"#;
        let e: ObservationEvent = serde_json::from_str(line).unwrap();
        assert_eq!(e, ObservationEvent::departure(0.0, "F1", 2.5));
    }

    #[test]
    fn empty_stream_emits_one_baseline_pass() {
        let mut steps = Vec::new();
        run_loop(toy_state(), &[], &toy_setup(), |_, s| steps.push(s.clone())).unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].version, 0);
        assert!(steps[0].reoptimized);
    }

    #[test]
    fn departures_at_slot_centers_update_congestion() {
        let events = vec![
            SourcedEvent {
                line: 1,
                event: ObservationEvent::departure(2.5, "F1", 2.5),
            },
            SourcedEvent {
                line: 2,
                event: ObservationEvent::departure(2.5, "F2", 2.5),
            },
        ];
        let setup = toy_setup();
        let mut steps = Vec::new();
        let end = run_loop(toy_state(), &events, &setup, |_, s| steps.push(s.clone())).unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[1].version, 2);
        assert_eq!(steps[1].events, 2);

        // T2 = 2.5 + U(10, 12) ⊂ [12.5, 14.5], so both flights are in S1
        // during [10, 20] with certainty.
        let timeline = end.congestion(&setup.sectors, &setup.slicing, 0.75);
        let p = timeline.get("S1", 10.0).unwrap().congestion_probability;
        assert!((p - 1.0).abs() < 1e-12);

        let before = steps[0]
            .clearances
            .iter()
            .find(|c| c.flight == "F2" && c.point == "4")
            .unwrap();
        let after = steps[1]
            .clearances
            .iter()
            .find(|c| c.flight == "F2" && c.point == "4")
            .unwrap();
        assert!(after.upper - after.lower < before.upper - before.lower);
    }

    #[test]
    fn replay_is_deterministic_and_reports_errors() {
        let events = vec![
            SourcedEvent {
                line: 1,
                event: ObservationEvent::departure(0.0, "F1", 1.0),
            },
            SourcedEvent {
                line: 2,
                event: ObservationEvent::overflight(1.0, "F2", "9", 3.0),
            },
            SourcedEvent {
                line: 3,
                event: ObservationEvent::overflight(20.0, "F1", "2", 12.0),
            },
        ];
        let setup = toy_setup();
        let run = || {
            let mut steps = Vec::new();
            run_loop(toy_state(), &events, &setup, |_, s| steps.push(s.clone())).unwrap();
            steps
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a[2].errors.len(), 1);
        assert_eq!(a[2].errors[0].line, 2);

        let strict = LoopSetup {
            policy: ReoptimizePolicy {
                strict: true,
                ..Default::default()
            },
            ..setup.clone()
        };
        assert!(run_loop(toy_state(), &events, &strict, |_, _| {}).is_err());
    }
}
