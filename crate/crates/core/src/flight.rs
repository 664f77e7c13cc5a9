//! Flight plans over metering points and their trajectory beliefs.
//!
//! Each flight is a chain of overflight times `T_{i+1} = T_i + T_{i→i+1}`
//! along its active route, with travel times independent of arrival times.
//! Flights never share nodes, so the set of chains is a forest.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dist::{convolve_capped, DistSpec, PiecewisePdf, DEFAULT_PIECE_CAP};
use crate::error::{ModelError, Result};

pub type PointId = String;
pub type FlightId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Ingoing,
    Outgoing,
    #[default]
    Interior,
}

/// A 3D fix where overflight-time objectives are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteringPoint {
    pub id: PointId,
    /// Longitude, latitude, altitude.
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub kind: PointKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEdge {
    pub from: PointId,
    pub to: PointId,
    pub travel: DistSpec,
    /// Performance bounds on the mean travel time.
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl RouteEdge {
    pub fn label(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }

    /// Whether `mean` lies within the performance bounds, up to rounding.
    pub fn admits_mean(&self, mean: f64) -> bool {
        let slack = 1e-9 * mean.abs().max(1.0);
        mean.is_finite() && mean >= self.lower_bound - slack && mean <= self.upper_bound + slack
    }

    /// Admissible mean shifts `[lower_bound - mean, upper_bound - mean]`.
    pub fn shift_range(&self) -> (f64, f64) {
        let mean = self.travel.mean();
        (self.lower_bound - mean, self.upper_bound - mean)
    }
}

/// A flight's route DAG with its enumerated alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightPlan {
    pub id: FlightId,
    /// Departure-slot prior at the origin point.
    pub departure: DistSpec,
    pub scheduled_arrival: f64,
    pub edges: Vec<RouteEdge>,
    /// Origin-to-destination point sequences.
    pub routes: Vec<Vec<PointId>>,
    #[serde(default)]
    pub active_route: usize,
    /// Set once [`reroute`] moved the flight off the route it was created with.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rerouted: bool,
}

impl FlightPlan {
    fn invalid(&self, reason: impl Into<String>) -> ModelError {
        ModelError::InvalidPlan {
            flight: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.departure
            .validate()
            .map_err(|e| self.invalid(format!("departure: {e}")))?;
        if !self.scheduled_arrival.is_finite() {
            return Err(self.invalid("scheduled arrival is not finite"));
        }
        let mut seen = HashSet::new();
        for edge in &self.edges {
            let label = edge.label();
            if !seen.insert((edge.from.as_str(), edge.to.as_str())) {
                return Err(self.invalid(format!("duplicate edge {label}")));
            }
            if edge.from == edge.to {
                return Err(self.invalid(format!("self-loop on {}", edge.from)));
            }
            edge.travel
                .validate()
                .map_err(|e| self.invalid(format!("edge {label}: {e}")))?;
            if edge.travel.support().0 < 0.0 {
                return Err(self.invalid(format!("edge {label} allows negative travel times")));
            }
            let mean = edge.travel.mean();
            if !edge.admits_mean(mean) {
                return Err(self.invalid(format!(
                    "edge {label} mean {mean} outside bounds [{}, {}]",
                    edge.lower_bound, edge.upper_bound
                )));
            }
        }
        self.check_acyclic()?;
        if self.routes.is_empty() {
            return Err(self.invalid("no routes"));
        }
        let origin = &self.routes[0][0];
        let destination = self.routes[0].last().unwrap_or(origin);
        for (r, route) in self.routes.iter().enumerate() {
            if route.len() < 2 {
                return Err(self.invalid(format!("route {r} has fewer than two points")));
            }
            if &route[0] != origin || route.last() != Some(destination) {
                return Err(self.invalid(format!(
                    "route {r} does not run from {origin} to {destination}"
                )));
            }
            for w in route.windows(2) {
                if self.edge_index(&w[0], &w[1]).is_none() {
                    return Err(
                        self.invalid(format!("route {r} uses missing edge {}-{}", w[0], w[1]))
                    );
                }
            }
        }
        if self.active_route >= self.routes.len() {
            return Err(ModelError::InvalidRoute {
                flight: self.id.clone(),
                index: self.active_route,
            });
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<()> {
        let mut indegree: HashMap<&str, usize> = HashMap::new();
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            indegree.entry(&e.from).or_default();
            *indegree.entry(&e.to).or_default() += 1;
            out.entry(&e.from).or_default().push(&e.to);
        }
        let mut ready: Vec<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for &m in out.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indegree.get_mut(m).expect("node registered");
                *d -= 1;
                if *d == 0 {
                    ready.push(m);
                }
            }
        }
        if visited != indegree.len() {
            return Err(self.invalid("edge set contains a cycle"));
        }
        Ok(())
    }

    pub fn edge_index(&self, from: &str, to: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.from == from && e.to == to)
    }

    pub fn route_points(&self, route: usize) -> &[PointId] {
        &self.routes[route]
    }

    pub fn active_points(&self) -> &[PointId] {
        &self.routes[self.active_route]
    }

    /// Edge indices traversed by `route`, in order.
    pub fn route_edges(&self, route: usize) -> Vec<usize> {
        self.routes[route]
            .windows(2)
            .map(|w| self.edge_index(&w[0], &w[1]).expect("validated route"))
            .collect()
    }

    pub fn origin(&self) -> &str {
        &self.routes[0][0]
    }

    pub fn destination(&self) -> &str {
        self.routes[0].last().expect("validated route")
    }

    /// Sum of nominal edge means along `route`, plus the departure mean.
    pub fn nominal_arrival(&self, route: usize) -> f64 {
        self.departure.mean()
            + self
                .route_edges(route)
                .iter()
                .map(|&e| self.edges[e].travel.mean())
                .sum::<f64>()
    }

    /// Checks that `shifts` keeps every edge mean within its bounds.
    pub fn check_shifts(&self, shifts: &[f64]) -> Result<()> {
        if shifts.is_empty() {
            return Ok(());
        }
        if shifts.len() != self.edges.len() {
            return Err(self.invalid(format!(
                "{} shifts given for {} edges",
                shifts.len(),
                self.edges.len()
            )));
        }
        for (edge, &delta) in self.edges.iter().zip(shifts) {
            let mean = edge.travel.mean() + delta;
            if !delta.is_finite() || !edge.admits_mean(mean) {
                return Err(ModelError::ShiftOutOfBounds {
                    flight: self.id.clone(),
                    edge: edge.label(),
                    mean,
                    lower: edge.lower_bound,
                    upper: edge.upper_bound,
                });
            }
        }
        Ok(())
    }
}

/// Replaces the active route; beliefs built on the old route must be
/// re-propagated.
pub fn reroute(plan: &FlightPlan, route_index: usize) -> Result<FlightPlan> {
    if route_index >= plan.routes.len() {
        return Err(ModelError::InvalidRoute {
            flight: plan.id.clone(),
            index: route_index,
        });
    }
    let mut next = plan.clone();
    if route_index != plan.active_route {
        next.active_route = route_index;
        next.rerouted = true;
    }
    Ok(next)
}

/// Latest exact observation of a flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub index: usize,
    pub point: PointId,
    pub time: f64,
}

/// Overflight densities along the active route.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBelief {
    pub flight: FlightId,
    pub route: usize,
    pub points: Vec<PointId>,
    pub overflight: Vec<PiecewisePdf>,
    /// Effective travel densities (after mean shift) for each route edge.
    pub travel: Vec<PiecewisePdf>,
    pub anchor: Option<Anchor>,
}

impl TrajectoryBelief {
    pub fn index_of(&self, point: &str) -> Option<usize> {
        self.points.iter().position(|p| p == point)
    }

    pub fn at(&self, point: &str) -> Option<&PiecewisePdf> {
        self.index_of(point).map(|i| &self.overflight[i])
    }

    pub fn arrival(&self) -> &PiecewisePdf {
        self.overflight
            .last()
            .expect("route has at least two points")
    }

    /// Directed dependencies of the belief network, as
    /// `((flight, point), (flight, point))` pairs.
    pub fn network_edges(&self) -> Vec<((FlightId, PointId), (FlightId, PointId))> {
        self.points
            .windows(2)
            .map(|w| {
                (
                    (self.flight.clone(), w[0].clone()),
                    (self.flight.clone(), w[1].clone()),
                )
            })
            .collect()
    }

    /// Largest CDF difference against `other` over both supports.
    pub fn max_cdf_difference(&self, other: &TrajectoryBelief) -> f64 {
        if self.points != other.points {
            return f64::INFINITY;
        }
        self.overflight
            .iter()
            .zip(&other.overflight)
            .map(|(a, b)| cdf_distance(a, b))
            .fold(0.0, f64::max)
    }
}

/// Sup-distance between two CDFs, probed at every breakpoint and on a grid.
pub fn cdf_distance(a: &PiecewisePdf, b: &PiecewisePdf) -> f64 {
    let (alo, ahi) = a.support();
    let (blo, bhi) = b.support();
    let lo = alo.min(blo);
    let hi = ahi.max(bhi);
    let mut probes: Vec<f64> = a
        .breakpoints()
        .iter()
        .chain(b.breakpoints())
        .copied()
        .collect();
    probes.extend([alo, ahi, blo, bhi]);
    if hi > lo {
        probes.extend((0..=512).map(|k| lo + (hi - lo) * k as f64 / 512.0));
    }
    probes
        .iter()
        .flat_map(|&t| [t - 1e-9, t, t + 1e-9])
        .map(|t| (a.cdf(t) - b.cdf(t)).abs())
        .fold(0.0, f64::max)
}

/// Convolution settings shared by every belief computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub piece_cap: usize,
    /// When set, every density is re-gridded at this step after each
    /// convolution and the piece cap no longer applies.
    pub grid_step: Option<f64>,
    /// Observations farther than this from the prior support are rejected.
    pub plausibility_window: f64,
}

impl Default for Propagator {
    fn default() -> Self {
        Propagator {
            piece_cap: DEFAULT_PIECE_CAP,
            grid_step: None,
            plausibility_window: 60.0,
        }
    }
}

impl Propagator {
    pub fn discretized(step: f64) -> Self {
        Propagator {
            grid_step: Some(step),
            ..Default::default()
        }
    }

    fn prepare(&self, pdf: PiecewisePdf) -> Result<PiecewisePdf> {
        match self.grid_step {
            Some(step) => Ok(pdf.discretize(step)?.pdf),
            None => Ok(pdf),
        }
    }

    fn add(&self, a: &PiecewisePdf, b: &PiecewisePdf) -> Result<PiecewisePdf> {
        match self.grid_step {
            Some(_) => self.prepare(convolve_capped(a, b, usize::MAX)?),
            None => convolve_capped(a, b, self.piece_cap),
        }
    }

    fn travel_pdfs(&self, plan: &FlightPlan, shifts: &[f64]) -> Result<Vec<PiecewisePdf>> {
        plan.check_shifts(shifts)?;
        plan.route_edges(plan.active_route)
            .into_iter()
            .map(|e| {
                let delta = shifts.get(e).copied().unwrap_or(0.0);
                self.prepare(plan.edges[e].travel.to_pdf()?.shift(delta))
            })
            .collect()
    }

    fn chain(&self, start: PiecewisePdf, travel: &[PiecewisePdf]) -> Result<Vec<PiecewisePdf>> {
        let mut out = Vec::with_capacity(travel.len() + 1);
        out.push(start);
        for t in travel {
            let next = self.add(out.last().expect("nonempty"), t)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Overflight densities along the active route from the departure prior.
    ///
    /// `shifts` holds one mean shift per plan edge, or is empty for none.
    pub fn propagate(&self, plan: &FlightPlan, shifts: &[f64]) -> Result<TrajectoryBelief> {
        let travel = self.travel_pdfs(plan, shifts)?;
        let departure = self.prepare(plan.departure.to_pdf()?)?;
        let overflight = self.chain(departure, &travel)?;
        Ok(TrajectoryBelief {
            flight: plan.id.clone(),
            route: plan.active_route,
            points: plan.active_points().to_vec(),
            overflight,
            travel,
            anchor: None,
        })
    }

    /// Rebuilds a belief for `plan` under `shifts`, keeping the observation
    /// history of `prior`.
    ///
    /// Points upstream of the anchor keep their historical densities; the
    /// anchored point stays a point mass; downstream points are recomputed.
    /// If the plan's active route no longer contains the anchored point the
    /// rebuild fails.
    pub fn repropagate(
        &self,
        plan: &FlightPlan,
        prior: &TrajectoryBelief,
        shifts: &[f64],
    ) -> Result<TrajectoryBelief> {
        let Some(anchor) = &prior.anchor else {
            return self.propagate(plan, shifts);
        };
        let points = plan.active_points().to_vec();
        let index = points
            .iter()
            .position(|p| *p == anchor.point)
            .ok_or_else(|| ModelError::PointNotOnRoute {
                flight: plan.id.clone(),
                point: anchor.point.clone(),
            })?;
        let travel = self.travel_pdfs(plan, shifts)?;
        let fresh;
        let needs_fresh = points[..index].iter().any(|p| prior.index_of(p).is_none());
        let fresh_ref = if needs_fresh {
            fresh = self.chain(self.prepare(plan.departure.to_pdf()?)?, &travel[..index])?;
            Some(&fresh)
        } else {
            None
        };
        let mut overflight = Vec::with_capacity(points.len());
        for (i, p) in points[..index].iter().enumerate() {
            match prior.at(p) {
                Some(pdf) => overflight.push(pdf.clone()),
                None => overflight.push(fresh_ref.expect("computed when needed")[i].clone()),
            }
        }
        let downstream = self.chain(PiecewisePdf::point_mass(anchor.time)?, &travel[index..])?;
        overflight.extend(downstream);
        Ok(TrajectoryBelief {
            flight: plan.id.clone(),
            route: plan.active_route,
            points,
            overflight,
            travel,
            anchor: Some(Anchor {
                index,
                point: anchor.point.clone(),
                time: anchor.time,
            }),
        })
    }

    /// Conditions a belief on the flight crossing `point` at time `t`.
    pub fn observe(
        &self,
        plan: &FlightPlan,
        belief: &TrajectoryBelief,
        point: &str,
        t: f64,
    ) -> Result<TrajectoryBelief> {
        if !t.is_finite() {
            return Err(ModelError::NonFinite("observed time"));
        }
        if belief.route != plan.active_route {
            return Err(ModelError::PointNotOnRoute {
                flight: plan.id.clone(),
                point: point.to_string(),
            });
        }
        let index = belief
            .index_of(point)
            .ok_or_else(|| ModelError::PointNotOnRoute {
                flight: plan.id.clone(),
                point: point.to_string(),
            })?;
        let (lo, hi) = belief.overflight[index].support();
        let (lo, hi) = (lo - self.plausibility_window, hi + self.plausibility_window);
        if t < lo || t > hi {
            return Err(ModelError::ImplausibleObservation {
                flight: plan.id.clone(),
                point: point.to_string(),
                time: t,
                lo,
                hi,
            });
        }
        let mut next = belief.clone();
        let observed = PiecewisePdf::point_mass(t)?;
        match &belief.anchor {
            // Late report of a point already passed: record it as history only.
            Some(a) if index < a.index => {
                next.overflight[index] = observed;
            }
            _ => {
                let downstream = self.chain(observed, &belief.travel[index..])?;
                next.overflight.truncate(index);
                next.overflight.extend(downstream);
                next.anchor = Some(Anchor {
                    index,
                    point: point.to_string(),
                    time: t,
                });
            }
        }
        Ok(next)
    }
}

/// [`Propagator::propagate`] with default settings.
pub fn propagate(plan: &FlightPlan, shifts: &[f64]) -> Result<TrajectoryBelief> {
    Propagator::default().propagate(plan, shifts)
}

/// [`Propagator::observe`] with default settings.
pub fn observe(
    plan: &FlightPlan,
    belief: &TrajectoryBelief,
    point: &str,
    t: f64,
) -> Result<TrajectoryBelief> {
    Propagator::default().observe(plan, belief, point, t)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn edge(from: &str, to: &str, lo: f64, hi: f64, slack: f64) -> RouteEdge {
        let mean = 0.5 * (lo + hi);
        RouteEdge {
            from: from.into(),
            to: to.into(),
            travel: DistSpec::uniform(lo, hi),
            lower_bound: mean,
            upper_bound: mean + slack,
        }
    }

    /// The four-point plan with the departure slot U(-5, 10).
    pub(crate) fn table_plan(id: &str) -> FlightPlan {
        FlightPlan {
            id: id.into(),
            departure: DistSpec::uniform(-5.0, 10.0),
            scheduled_arrival: 46.0,
            edges: vec![
                edge("1", "2", 10.0, 12.0, 5.0),
                edge("2", "3", 15.0, 20.0, 5.0),
                edge("3", "4", 12.0, 18.0, 5.0),
            ],
            routes: vec![vec!["1".into(), "2".into(), "3".into(), "4".into()]],
            active_route: 0,
            rerouted: false,
        }
    }

    fn two_route_plan() -> FlightPlan {
        let mut plan = table_plan("F");
        plan.edges.push(edge("2", "5", 20.0, 30.0, 5.0));
        plan.edges.push(edge("5", "4", 10.0, 14.0, 5.0));
        plan.routes
            .push(vec!["1".into(), "2".into(), "5".into(), "4".into()]);
        plan
    }

    #[test]
    fn table_plan_arrival() {
        let plan = table_plan("F1");
        plan.validate().unwrap();
        let b = propagate(&plan, &[]).unwrap();
        assert_eq!(b.arrival().support(), (32.0, 60.0));
        assert!((b.arrival().expectation() - 46.0).abs() < 1e-9);
        assert!((b.arrival().variance() - 290.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn point_mass_departure_single_edge() {
        let plan = FlightPlan {
            id: "F".into(),
            departure: DistSpec::point(3.0),
            scheduled_arrival: 14.0,
            edges: vec![edge("a", "b", 10.0, 12.0, 1.0)],
            routes: vec![vec!["a".into(), "b".into()]],
            active_route: 0,
            rerouted: false,
        };
        let b = propagate(&plan, &[]).unwrap();
        assert_eq!(b.arrival().support(), (13.0, 15.0));
        assert!((b.arrival().density(14.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shifted_edge_matches_manual_chain() {
        let plan = table_plan("F1");
        let b = propagate(&plan, &[2.0, 0.0, 0.0]).unwrap();
        let manual = crate::dist::convolve(
            &DistSpec::uniform(-5.0, 10.0).to_pdf().unwrap(),
            &DistSpec::uniform(12.0, 14.0).to_pdf().unwrap(),
        )
        .unwrap();
        assert!(cdf_distance(b.at("2").unwrap(), &manual) < 1e-12);
    }

    #[test]
    fn shift_out_of_bounds_names_edge() {
        let plan = table_plan("F1");
        match propagate(&plan, &[0.0, 6.0, 0.0]) {
            Err(ModelError::ShiftOutOfBounds { edge, .. }) => assert_eq!(edge, "2-3"),
            other => panic!("{other:?}"),
        }
        assert!(propagate(&plan, &[-0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn observe_departure_and_destination() {
        let plan = table_plan("F1");
        let b = propagate(&plan, &[]).unwrap();
        let o = observe(&plan, &b, "1", 0.0).unwrap();
        assert!((o.arrival().expectation() - 43.5).abs() < 1e-9);
        assert!((o.arrival().variance() - 65.0 / 12.0).abs() < 1e-9);
        let d = observe(&plan, &o, "4", 44.0).unwrap();
        assert_eq!(d.arrival().variance(), 0.0);
        assert_eq!(d.anchor.as_ref().unwrap().index, 3);
    }

    #[test]
    fn observation_reproduces_translated_travel_density() {
        let plan = table_plan("F1");
        let b = propagate(&plan, &[]).unwrap();
        let o = observe(&plan, &b, "2", 20.0).unwrap();
        let expected = DistSpec::uniform(15.0, 20.0).to_pdf().unwrap().shift(20.0);
        assert!(cdf_distance(o.at("3").unwrap(), &expected) < 1e-12);
        // upstream frozen
        assert_eq!(o.at("1"), b.at("1"));
    }

    #[test]
    fn observe_rejects_bad_input() {
        let plan = table_plan("F1");
        let b = propagate(&plan, &[]).unwrap();
        assert!(matches!(
            observe(&plan, &b, "9", 10.0),
            Err(ModelError::PointNotOnRoute { .. })
        ));
        assert!(matches!(
            observe(&plan, &b, "4", 500.0),
            Err(ModelError::ImplausibleObservation { .. })
        ));
    }

    #[test]
    fn markov_property() {
        let plan = table_plan("F1");
        let b = propagate(&plan, &[]).unwrap();
        let p = Propagator::default();
        let from_two = p.chain(b.overflight[1].clone(), &b.travel[1..]).unwrap();
        for (x, y) in from_two.iter().zip(&b.overflight[1..]) {
            assert!(cdf_distance(x, y) < 1e-9);
        }
    }

    #[test]
    fn single_edge_shift_moves_downstream_means() {
        let plan = table_plan("F1");
        let base = propagate(&plan, &[]).unwrap();
        let shifted = propagate(&plan, &[0.0, 3.5, 0.0]).unwrap();
        for i in 0..4 {
            let d = shifted.overflight[i].expectation() - base.overflight[i].expectation();
            let want = if i >= 2 { 3.5 } else { 0.0 };
            assert!((d - want).abs() < 1e-9);
        }
    }

    #[test]
    fn propagation_is_idempotent() {
        let plan = table_plan("F1");
        assert_eq!(
            propagate(&plan, &[1.0, 0.0, 2.0]),
            propagate(&plan, &[1.0, 0.0, 2.0])
        );
    }

    #[test]
    fn reroute_same_index_keeps_belief() {
        let plan = two_route_plan();
        plan.validate().unwrap();
        let b = propagate(&plan, &[]).unwrap();
        let same = reroute(&plan, 0).unwrap();
        assert!(!same.rerouted);
        assert_eq!(
            Propagator::default().repropagate(&same, &b, &[]).unwrap(),
            b
        );
        assert!(reroute(&plan, 2).is_err());
    }

    #[test]
    fn reroute_to_longer_route_moves_arrival() {
        let plan = two_route_plan();
        let b0 = propagate(&plan, &[]).unwrap();
        let alt = reroute(&plan, 1).unwrap();
        assert!(alt.rerouted);
        let b1 = propagate(&alt, &[]).unwrap();
        let diff = (25.0 + 12.0) - (17.5 + 15.0);
        assert!((b1.arrival().expectation() - b0.arrival().expectation() - diff).abs() < 1e-9);
    }

    #[test]
    fn reroute_keeps_anchor_only_on_new_route() {
        let plan = two_route_plan();
        let p = Propagator::default();
        let b = p.propagate(&plan, &[]).unwrap();
        // observed at 2, shared by both routes
        let o = p.observe(&plan, &b, "2", 15.0).unwrap();
        let alt = reroute(&plan, 1).unwrap();
        let r = p.repropagate(&alt, &o, &[]).unwrap();
        assert_eq!(r.anchor.as_ref().unwrap().point, "2");
        assert!((r.arrival().expectation() - (15.0 + 25.0 + 12.0)).abs() < 1e-9);
        // observed at 3, which the alternative skips
        let o3 = p.observe(&plan, &b, "3", 30.0).unwrap();
        assert!(matches!(
            p.repropagate(&alt, &o3, &[]),
            Err(ModelError::PointNotOnRoute { .. })
        ));
    }

    #[test]
    fn validation_catches_bad_plans() {
        let mut p = table_plan("F");
        p.edges[1].lower_bound = 18.0;
        assert!(p.validate().is_err());

        let mut p = table_plan("F");
        p.edges.push(edge("4", "1", 1.0, 2.0, 1.0));
        assert!(p.validate().unwrap_err().to_string().contains("cycle"));

        let mut p = table_plan("F");
        p.routes.push(vec!["1".into(), "3".into(), "4".into()]);
        assert!(p.validate().is_err());

        let mut p = table_plan("F");
        p.active_route = 3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn beliefs_form_a_forest() {
        let a = propagate(&table_plan("A"), &[]).unwrap();
        let b = propagate(&table_plan("B"), &[]).unwrap();
        for ((fa, _), (fb, _)) in a.network_edges().into_iter().chain(b.network_edges()) {
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn discretized_propagation_tracks_exact() {
        let plan = table_plan("F1");
        let exact = propagate(&plan, &[]).unwrap();
        let grid = Propagator::discretized(0.25).propagate(&plan, &[]).unwrap();
        assert!(cdf_distance(exact.arrival(), grid.arrival()) < 0.01);
        assert!((grid.arrival().expectation() - 46.0).abs() < 0.1);
    }
}
