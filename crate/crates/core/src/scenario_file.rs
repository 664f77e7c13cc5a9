//! On-disk scenario format: airspace, flight plans and run configuration.
//!
//! Times are decimal minutes relative to the scenario epoch.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::DEFAULT_PIECE_CAP;
use crate::flight::{FlightPlan, MeteringPoint, Propagator};
use crate::monitor::{LoopSetup, ReoptimizePolicy};
use crate::optimizer::{ConstraintMode, OptimizerConfig, Snapshot};
use crate::scenario::DEFAULT_SAMPLES;
use crate::sector::{Sector, Slicing, DEFAULT_EPSILON, DEFAULT_SLICE_WIDTH};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Airspace {
    /// Metering points; when empty, point references are not checked.
    #[serde(default)]
    pub points: Vec<MeteringPoint>,
    #[serde(default)]
    pub sectors: Vec<Sector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub slice_width: f64,
    pub slice_origin: f64,
    /// End of the last slice; derived from the latest possible arrival if absent.
    pub horizon: Option<f64>,
    pub epsilon: f64,
    pub p: f64,
    pub constraint_mode: ConstraintMode,
    pub soft_weight: f64,
    pub reroute_penalty: f64,
    pub variance_weight: f64,
    pub samples: usize,
    /// Scenarios per optimizer evaluation; 0 evaluates exactly.
    pub inner_samples: usize,
    pub seed: u64,
    /// Grid step for discretized propagation.
    pub discretize: Option<f64>,
    pub piece_cap: usize,
    pub plausibility_window: f64,
    pub max_iters: usize,
    pub stall_window: usize,
    pub offspring: usize,
    pub batch_window: f64,
    pub change_threshold: f64,
    pub reoptimize_interval: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let policy = ReoptimizePolicy::default();
        RunConfig {
            slice_width: DEFAULT_SLICE_WIDTH,
            slice_origin: 0.0,
            horizon: None,
            epsilon: DEFAULT_EPSILON,
            p: opt.p,
            constraint_mode: opt.constraint_mode,
            soft_weight: opt.soft_weight,
            reroute_penalty: opt.reroute_penalty,
            variance_weight: opt.variance_weight,
            samples: DEFAULT_SAMPLES,
            inner_samples: 0,
            seed: 0,
            discretize: None,
            piece_cap: DEFAULT_PIECE_CAP,
            plausibility_window: Propagator::default().plausibility_window,
            max_iters: opt.max_iters,
            stall_window: opt.stall_window,
            offspring: opt.offspring,
            batch_window: policy.batch_window,
            change_threshold: policy.change_threshold,
            reoptimize_interval: policy.interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub airspace: Airspace,
    #[serde(default)]
    pub flights: Vec<FlightPlan>,
    #[serde(default)]
    pub config: RunConfig,
}

/// One problem found by [`ScenarioFile::validate`], located by a JSON-ish path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            LoadError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Every schema and invariant violation, in file order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| out.push(Violation { path, message });

        if self.schema_version != SCHEMA_VERSION {
            push(
                "schema_version".into(),
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }

        let mut point_ids = HashSet::new();
        for (i, p) in self.airspace.points.iter().enumerate() {
            if !point_ids.insert(p.id.as_str()) {
                push(
                    format!("airspace.points[{i}]"),
                    format!("duplicate point {}", p.id),
                );
            }
        }
        let check_points = !point_ids.is_empty();

        let mut sector_ids = HashSet::new();
        for (i, s) in self.airspace.sectors.iter().enumerate() {
            let at = format!("airspace.sectors[{i}]");
            if !sector_ids.insert(s.id.as_str()) {
                push(at.clone(), format!("duplicate sector {}", s.id));
            }
            if s.capacity == 0 {
                push(
                    format!("{at}.capacity"),
                    format!("sector {} has capacity 0", s.id),
                );
            }
            if s.gates.is_empty() {
                push(
                    format!("{at}.gates"),
                    format!("sector {} has no boundary points", s.id),
                );
            }
            for (g, gate) in s.gates.iter().enumerate() {
                if gate.entry == gate.exit {
                    push(
                        format!("{at}.gates[{g}]"),
                        format!("entry and exit are both {}", gate.entry),
                    );
                }
                for p in [&gate.entry, &gate.exit] {
                    if check_points && !point_ids.contains(p.as_str()) {
                        push(format!("{at}.gates[{g}]"), format!("unknown point {p}"));
                    }
                }
            }
        }

        let mut flight_ids = HashSet::new();
        for (i, plan) in self.flights.iter().enumerate() {
            let at = format!("flights[{i}]");
            if !flight_ids.insert(plan.id.as_str()) {
                push(at.clone(), format!("duplicate flight {}", plan.id));
            }
            let mut edge_problem = false;
            for (e, edge) in plan.edges.iter().enumerate() {
                let label = edge.label();
                if let Err(err) = edge.travel.validate() {
                    push(format!("{at}.edges[{e}]"), format!("edge {label}: {err}"));
                    edge_problem = true;
                    continue;
                }
                let mean = edge.travel.mean();
                if !edge.admits_mean(mean) {
                    push(
                        format!("{at}.edges[{e}]"),
                        format!(
                            "edge {label} of flight {}: mean {mean} outside bounds [{}, {}]",
                            plan.id, edge.lower_bound, edge.upper_bound
                        ),
                    );
                    edge_problem = true;
                }
                if check_points {
                    for p in [&edge.from, &edge.to] {
                        if !point_ids.contains(p.as_str()) {
                            push(format!("{at}.edges[{e}]"), format!("unknown point {p}"));
                            edge_problem = true;
                        }
                    }
                }
            }
            if !edge_problem {
                if let Err(err) = plan.validate() {
                    push(at.clone(), err.to_string());
                }
            }
            for s in &self.airspace.sectors {
                for (r, route) in plan.routes.iter().enumerate() {
                    if let Err(err) = s.check_route(route) {
                        push(format!("{at}.routes[{r}]"), err.to_string());
                    }
                }
            }
        }

        let c = &self.config;
        if let Err(e) = self.slicing_unchecked().validate() {
            push("config".into(), e.to_string());
        }
        if let Err(e) = self.optimizer_config().validate() {
            push("config".into(), e.to_string());
        }
        if c.samples == 0 {
            push(
                "config.samples".into(),
                "at least one scenario is required".into(),
            );
        }
        if let Some(step) = c.discretize {
            if !(step > 0.0) || !step.is_finite() {
                push(
                    "config.discretize".into(),
                    format!("grid step must be positive, got {step}"),
                );
            }
        }
        if c.piece_cap == 0 {
            push(
                "config.piece_cap".into(),
                "piece cap must be positive".into(),
            );
        }
        out
    }

    /// Latest time any flight can reach its destination under the
    /// largest admissible shifts, rounded up to a slice boundary.
    pub fn derived_horizon(&self) -> f64 {
        let c = &self.config;
        let latest = self
            .flights
            .iter()
            .map(|plan| {
                let per_edge: HashMap<(&str, &str), f64> = plan
                    .edges
                    .iter()
                    .map(|e| {
                        let up = e.travel.support().1 + e.shift_range().1.max(0.0);
                        ((e.from.as_str(), e.to.as_str()), up)
                    })
                    .collect();
                let longest = plan
                    .routes
                    .iter()
                    .map(|r| {
                        r.windows(2)
                            .map(|w| {
                                per_edge
                                    .get(&(w[0].as_str(), w[1].as_str()))
                                    .copied()
                                    .unwrap_or(0.0)
                            })
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max);
                plan.departure.support().1 + longest
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if !latest.is_finite() || latest <= c.slice_origin || !(c.slice_width > 0.0) {
            return c.slice_origin + c.slice_width;
        }
        let n = ((latest - c.slice_origin) / c.slice_width).ceil().max(1.0);
        c.slice_origin + n * c.slice_width
    }

    fn slicing_unchecked(&self) -> Slicing {
        let c = &self.config;
        Slicing {
            origin: c.slice_origin,
            width: c.slice_width,
            horizon: c.horizon.unwrap_or_else(|| self.derived_horizon()),
        }
    }

    pub fn slicing(&self) -> crate::Result<Slicing> {
        let s = self.slicing_unchecked();
        s.validate()?;
        Ok(s)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let c = &self.config;
        OptimizerConfig {
            p: c.p,
            epsilon: c.epsilon,
            constraint_mode: c.constraint_mode,
            soft_weight: c.soft_weight,
            reroute_penalty: c.reroute_penalty,
            variance_weight: c.variance_weight,
            inner_samples: c.inner_samples,
            stall_window: c.stall_window,
            max_iters: c.max_iters,
            offspring: c.offspring,
            seed: c.seed,
        }
    }

    pub fn propagator(&self) -> Propagator {
        let c = &self.config;
        Propagator {
            piece_cap: c.piece_cap,
            grid_step: c.discretize,
            plausibility_window: c.plausibility_window,
        }
    }

    pub fn policy(&self) -> ReoptimizePolicy {
        let c = &self.config;
        ReoptimizePolicy {
            batch_window: c.batch_window,
            change_threshold: c.change_threshold,
            interval: c.reoptimize_interval,
            strict: false,
        }
    }

    pub fn snapshot(&self) -> crate::Result<Snapshot> {
        Snapshot::new(
            self.flights.clone(),
            self.airspace.sectors.clone(),
            self.slicing()?,
            self.propagator(),
        )
    }

    pub fn loop_setup(&self) -> crate::Result<LoopSetup> {
        Ok(LoopSetup {
            sectors: self.airspace.sectors.clone(),
            slicing: self.slicing()?,
            optimizer: self.optimizer_config(),
            policy: self.policy(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
      "schema_version": 1,
      "airspace": {
        "points": [{"id": "1"}, {"id": "2"}, {"id": "3"}, {"id": "4"}],
        "sectors": [{"id": "S1", "capacity": 1, "gates": [{"entry": "2", "exit": "3"}]}]
      },
      "flights": [{
        "id": "F1",
        "departure": {"type": "uniform", "lower": -5, "upper": 10},
        "scheduled_arrival": 46,
        "edges": [
          {"from": "1", "to": "2", "travel": {"type": "uniform", "lower": 10, "upper": 12}, "lower_bound": 11, "upper_bound": 16},
          {"from": "2", "to": "3", "travel": {"type": "uniform", "lower": 15, "upper": 20}, "lower_bound": 17.5, "upper_bound": 22.5},
          {"from": "3", "to": "4", "travel": {"type": "uniform", "lower": 12, "upper": 18}, "lower_bound": 15, "upper_bound": 20}
        ],
        "routes": [["1", "2", "3", "4"]]
      }],
      "config": {"slice_width": 10}
    }"#;

    fn toy() -> ScenarioFile {
        ScenarioFile::from_json(TOY).unwrap()
    }

    #[test]
    fn toy_is_valid() {
        assert_eq!(toy().validate(), vec![]);
    }

    #[test]
    fn horizon_covers_latest_shifted_arrival() {
        // 10 + 12 + 20 + 18 + 3 × 5 = 75 → 80
        assert_eq!(toy().derived_horizon(), 80.0);
        assert_eq!(toy().slicing().unwrap().slices().len(), 8);
    }

    #[test]
    fn all_violations_are_listed() {
        let mut f = toy();
        f.airspace.sectors[0].capacity = 0;
        f.flights[0].edges[1].lower_bound = 18.0;
        f.flights[0].routes[0] = vec!["1".into(), "3".into(), "2".into(), "4".into()];
        f.airspace.sectors[0].gates[0].exit = "9".into();
        let v = f.validate();
        assert!(v.iter().any(|x| x.path == "airspace.sectors[0].capacity"));
        assert!(v
            .iter()
            .any(|x| x.message.contains("edge 2-3") && x.message.contains("outside bounds")));
        assert!(v.iter().any(|x| x.message.contains("unknown point 9")));
        assert!(v.len() >= 3);
    }

    #[test]
    fn reversed_gate_is_reported() {
        let mut f = toy();
        f.airspace.sectors[0].gates[0] = crate::sector::Gate {
            entry: "3".into(),
            exit: "2".into(),
        };
        let v = f.validate();
        assert!(v
            .iter()
            .any(|x| x.path == "flights[0].routes[0]" && x.message.contains("precedes")));
    }

    #[test]
    fn parse_errors_carry_location() {
        let broken = TOY.replace(r#""capacity": 1"#, r#""capacity": "one""#);
        match ScenarioFile::from_json(&broken) {
            Err(LoadError::Parse { line, field, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(field, "airspace.sectors[0].capacity");
            }
            other => panic!("{other:?}"),
        }
        let unknown = TOY.replace(r#""slice_width": 10"#, r#""slice_widht": 10"#);
        assert!(matches!(
            ScenarioFile::from_json(&unknown),
            Err(LoadError::Parse { .. })
        ));
    }

    #[test]
    fn missing_schema_version_is_a_parse_error() {
        let text = TOY.replace(r#""schema_version": 1,"#, "");
        assert!(matches!(
            ScenarioFile::from_json(&text),
            Err(LoadError::Parse { .. })
        ));
    }
}
