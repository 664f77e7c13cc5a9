//! `airspace` command-line front end.
//!
//! Every command reads a JSON scenario file, applies flag overrides and
//! writes its reports into `--out` (default: the current directory).
//! Exit status: 0 success, 1 usage or parse error, 2 invariant violation,
//! 3 no feasible solution.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use airspace_core::flight::{Anchor, FlightPlan};
use airspace_core::monitor::{run_loop, AirspaceState, LoopStep, ObservationEvent, SourcedEvent};
use airspace_core::optimizer::{delay_cost, optimize, ConstraintMode, OptimizeStatus};
use airspace_core::scenario::{
    estimate_congestion, estimate_expected_arrivals, sample_scenarios, SampleInput, ScenarioSet,
};
use airspace_core::scenario_file::{LoadError, ScenarioFile};
use airspace_core::sector::{congestion_timeline, SliceCongestion};
use airspace_core::ModelError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Bins per density curve written by `simulate --dump-pdfs`.
const PDF_BINS: usize = 60;

#[derive(Debug, Parser)]
#[command(
    name = "airspace",
    version,
    about = "Stochastic sector-congestion prediction and regulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and list every violation.
    Validate { path: PathBuf },
    /// Exact arrival and congestion prediction.
    Predict {
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte-Carlo estimates with confidence half-widths.
    Simulate {
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Write sampled density curves per metering point to pdfs.csv.
        #[arg(long)]
        dump_pdfs: bool,
        /// Write every sampled scenario to scenarios.jsonl.
        #[arg(long)]
        dump_scenarios: bool,
    },
    /// Search for clearances that keep congestion below ε.
    Optimize {
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Replay an observation stream and emit versioned clearance updates.
    Monitor {
        path: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// JSON-lines observation events.
        #[arg(long)]
        events: PathBuf,
        /// Stop at the first bad event.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConstraintArg {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Time-slice width in minutes.
    #[arg(long)]
    pub slices: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Equity exponent of the delay cost.
    #[arg(long)]
    pub p: Option<f64>,
    /// Scenario count: simulation size, or per-evaluation samples for `optimize`
    /// (which then evaluates by Monte Carlo instead of exactly).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Re-grid densities at this step instead of failing on piece overflow.
    #[arg(long)]
    pub discretize: Option<f64>,
    #[arg(long, value_enum)]
    pub constraint: Option<ConstraintArg>,
}

/// A failed command with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DiscretizationRequired { pieces, cap } => Failure::invalid(format!(
                "density needs {pieces} pieces, above the cap of {cap}; rerun with --discretize <step> (e.g. --discretize 0.1)"
            )),
            other => Failure::invalid(other.to_string()),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure::usage(e.to_string())
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(
    command: &Command,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    match command {
        Command::Validate { path } => validate(path, out),
        Command::Predict { path, run } => predict(path, run, out),
        Command::Simulate {
            path,
            run,
            dump_pdfs,
            dump_scenarios,
        } => simulate(path, run, *dump_pdfs, *dump_scenarios, out),
        Command::Optimize { path, run } => optimize_cmd(path, run, out),
        Command::Monitor {
            path,
            run,
            events,
            strict,
        } => monitor(path, run, events, *strict, out, err),
    }
}

fn validate(path: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = ScenarioFile::load(path)?;
    let violations = file.validate();
    if violations.is_empty() {
        writeln!(out, "OK").map_err(|e| io_failure(path, e))?;
        return Ok(EXIT_OK);
    }
    for v in &violations {
        writeln!(out, "violation: {v}").map_err(|e| io_failure(path, e))?;
    }
    Err(Failure::invalid(format!(
        "{} violation(s) in {}",
        violations.len(),
        path.display()
    )))
}

/// Loads, applies overrides and validates.
pub fn load_scenario(path: &Path, run: &RunArgs) -> Result<ScenarioFile, Failure> {
    let mut file = ScenarioFile::load(path)?;
    let c = &mut file.config;
    if let Some(w) = run.slices {
        c.slice_width = w;
    }
    if let Some(e) = run.epsilon {
        c.epsilon = e;
    }
    if let Some(p) = run.p {
        c.p = p;
    }
    if let Some(s) = run.seed {
        c.seed = s;
    }
    if let Some(step) = run.discretize {
        c.discretize = Some(step);
    }
    if let Some(mode) = run.constraint {
        c.constraint_mode = match mode {
            ConstraintArg::Hard => ConstraintMode::Hard,
            ConstraintArg::Soft => ConstraintMode::Soft,
        };
    }
    if let Some(m) = run.samples {
        c.samples = m;
    }
    let violations = file.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Failure::invalid(format!(
            "invalid scenario:\n  {}",
            list.join("\n  ")
        )));
    }
    Ok(file)
}

fn out_dir(run: &RunArgs) -> Result<&Path, Failure> {
    fs::create_dir_all(&run.out).map_err(|e| io_failure(&run.out, e))?;
    Ok(&run.out)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S], header: &[&str]) -> Result<(), Failure> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_failure(path, e))?;
    w.write_record(header).map_err(|e| io_failure(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Failure> {
    let f = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    writeln!(w).map_err(|e| io_failure(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalRow {
    pub flight: String,
    pub expected: f64,
    pub variance: f64,
    pub scheduled: f64,
    pub expected_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CongestionRow {
    pub sector_id: String,
    pub t0: f64,
    pub t1: f64,
    pub congestion_probability: f64,
    pub flagged: bool,
}

impl From<&SliceCongestion> for CongestionRow {
    fn from(e: &SliceCongestion) -> Self {
        CongestionRow {
            sector_id: e.sector_id.clone(),
            t0: e.t0,
            t1: e.t1,
            congestion_probability: e.congestion_probability,
            flagged: e.flagged,
        }
    }
}

const ARRIVAL_HEADER: &[&str] = &[
    "flight",
    "expected",
    "variance",
    "scheduled",
    "expected_delay",
];
const CONGESTION_HEADER: &[&str] = &["sector_id", "t0", "t1", "congestion_probability", "flagged"];

fn summarize(
    out: &mut dyn Write,
    arrivals: &[ArrivalRow],
    flagged: &[CongestionRow],
    p: f64,
) -> Result<(), Failure> {
    let expected: Vec<f64> = arrivals.iter().map(|a| a.expected).collect();
    let scheduled: Vec<f64> = arrivals.iter().map(|a| a.scheduled).collect();
    let cost = delay_cost(&expected, &scheduled, p)?;
    let w = |e| Failure::usage(format!("stdout: {e}"));
    for a in arrivals {
        writeln!(
            out,
            "arrival {}: expected {} variance {}",
            a.flight, a.expected, a.variance
        )
        .map_err(w)?;
    }
    for c in flagged {
        writeln!(
            out,
            "flagged {} [{}, {}]: {}",
            c.sector_id, c.t0, c.t1, c.congestion_probability
        )
        .map_err(w)?;
    }
    writeln!(out, "delay cost (p = {p}): {cost}").map_err(w)?;
    Ok(())
}

fn predict(path: &Path, run: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = load_scenario(path, run)?;
    let dir = out_dir(run)?;
    let snapshot = file.snapshot()?;
    let arrivals: Vec<ArrivalRow> = snapshot
        .plans
        .iter()
        .zip(&snapshot.beliefs)
        .map(|(plan, b)| {
            let arr = b.arrival();
            ArrivalRow {
                flight: plan.id.clone(),
                expected: arr.expectation(),
                variance: arr.variance(),
                scheduled: plan.scheduled_arrival,
                expected_delay: arr.expectation() - plan.scheduled_arrival,
            }
        })
        .collect();
    let congestion: Vec<CongestionRow> = if file.flights.is_empty() {
        Vec::new()
    } else {
        congestion_timeline(
            &snapshot.beliefs,
            &snapshot.sectors,
            &snapshot.slicing,
            file.config.epsilon,
        )
        .entries
        .iter()
        .map(CongestionRow::from)
        .collect()
    };
    write_csv(&dir.join("arrivals.csv"), &arrivals, ARRIVAL_HEADER)?;
    write_csv(&dir.join("congestion.csv"), &congestion, CONGESTION_HEADER)?;
    let flagged: Vec<CongestionRow> = congestion.iter().filter(|c| c.flagged).cloned().collect();
    summarize(out, &arrivals, &flagged, file.config.p)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McArrivalRow {
    pub flight: String,
    pub expected: f64,
    pub variance: f64,
    pub half_width: f64,
    pub scheduled: f64,
    pub expected_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McCongestionRow {
    pub sector_id: String,
    pub t0: f64,
    pub t1: f64,
    pub congestion_probability: f64,
    pub half_width: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct PdfRow<'a> {
    flight: &'a str,
    point: &'a str,
    bin_lo: f64,
    bin_hi: f64,
    density: f64,
}

fn simulate(
    path: &Path,
    run: &RunArgs,
    dump_pdfs: bool,
    dump_scenarios: bool,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let file = load_scenario(path, run)?;
    let dir = out_dir(run)?;
    let slicing = file.slicing()?;
    let c = &file.config;
    let set = if file.flights.is_empty() {
        None
    } else {
        let inputs: Vec<SampleInput<'_>> = file.flights.iter().map(SampleInput::new).collect();
        Some(sample_scenarios(&inputs, c.samples, c.seed)?)
    };

    let (arrivals, congestion) = match &set {
        None => (Vec::new(), Vec::new()),
        Some(set) => {
            let est = estimate_expected_arrivals(set)?;
            let arrivals: Vec<McArrivalRow> = est
                .iter()
                .zip(&file.flights)
                .map(|(a, plan)| McArrivalRow {
                    flight: a.flight.clone(),
                    expected: a.mean,
                    variance: a.variance,
                    half_width: a.half_width,
                    scheduled: plan.scheduled_arrival,
                    expected_delay: a.mean - plan.scheduled_arrival,
                })
                .collect();
            let timeline = estimate_congestion(set, &file.airspace.sectors, &slicing, c.epsilon);
            let congestion = timeline
                .timeline
                .entries
                .iter()
                .zip(&timeline.half_widths)
                .map(|(e, &h)| McCongestionRow {
                    sector_id: e.sector_id.clone(),
                    t0: e.t0,
                    t1: e.t1,
                    congestion_probability: e.congestion_probability,
                    half_width: h,
                    flagged: e.flagged,
                })
                .collect();
            (arrivals, congestion)
        }
    };
    write_csv(
        &dir.join("arrivals.csv"),
        &arrivals,
        &[
            "flight",
            "expected",
            "variance",
            "half_width",
            "scheduled",
            "expected_delay",
        ],
    )?;
    write_csv(
        &dir.join("congestion.csv"),
        &congestion,
        &[
            "sector_id",
            "t0",
            "t1",
            "congestion_probability",
            "half_width",
            "flagged",
        ],
    )?;
    if dump_pdfs {
        let rows = set.as_ref().map(pdf_rows).unwrap_or_default();
        write_csv(
            &dir.join("pdfs.csv"),
            &rows,
            &["flight", "point", "bin_lo", "bin_hi", "density"],
        )?;
    }
    if dump_scenarios {
        let p = dir.join("scenarios.jsonl");
        let f = File::create(&p).map_err(|e| io_failure(&p, e))?;
        let mut w = BufWriter::new(f);
        if let Some(set) = &set {
            set.write_jsonl(&mut w).map_err(|e| io_failure(&p, e))?;
        }
        w.flush().map_err(|e| io_failure(&p, e))?;
    }

    let w = |e| Failure::usage(format!("stdout: {e}"));
    writeln!(
        out,
        "scenarios: {} (seed {})",
        set.as_ref().map_or(0, ScenarioSet::len),
        c.seed
    )
    .map_err(w)?;
    for a in &arrivals {
        writeln!(
            out,
            "arrival {}: expected {} ± {}",
            a.flight, a.expected, a.half_width
        )
        .map_err(w)?;
    }
    for r in congestion.iter().filter(|r| r.flagged) {
        writeln!(
            out,
            "flagged {} [{}, {}]: {} ± {}",
            r.sector_id, r.t0, r.t1, r.congestion_probability, r.half_width
        )
        .map_err(w)?;
    }
    Ok(EXIT_OK)
}

/// Histogram density of the sampled overflight times at every route point.
fn pdf_rows(set: &ScenarioSet) -> Vec<PdfRow<'_>> {
    let mut rows = Vec::new();
    let m = set.len() as f64;
    for (f, id) in set.flight_ids.iter().enumerate() {
        for (i, point) in set.routes[f].iter().enumerate() {
            let times: Vec<f64> = set
                .scenarios
                .iter()
                .map(|s| s.flights[f].times[i])
                .collect();
            let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-12 {
                rows.push(PdfRow {
                    flight: id,
                    point,
                    bin_lo: lo,
                    bin_hi: hi,
                    density: f64::INFINITY,
                });
                continue;
            }
            let width = (hi - lo) / PDF_BINS as f64;
            let mut counts = [0usize; PDF_BINS];
            for t in &times {
                let k = (((t - lo) / width) as usize).min(PDF_BINS - 1);
                counts[k] += 1;
            }
            for (k, &c) in counts.iter().enumerate() {
                rows.push(PdfRow {
                    flight: id,
                    point,
                    bin_lo: lo + k as f64 * width,
                    bin_hi: lo + (k + 1) as f64 * width,
                    density: c as f64 / (m * width),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Serialize)]
struct ReportSummary<'a> {
    delay_cost: f64,
    objective: f64,
    max_congestion: f64,
    feasible: bool,
    flagged: Vec<&'a SliceCongestion>,
}

#[derive(Debug, Serialize)]
struct OptimizeReport<'a> {
    status: OptimizeStatus,
    evaluations: usize,
    decision: &'a airspace_core::optimizer::DecisionVector,
    baseline: ReportSummary<'a>,
    report: &'a airspace_core::optimizer::EvaluationReport,
}

fn summary(r: &airspace_core::optimizer::EvaluationReport) -> ReportSummary<'_> {
    ReportSummary {
        delay_cost: r.delay_cost,
        objective: r.objective,
        max_congestion: r.max_congestion,
        feasible: r.feasible,
        flagged: r.timeline.flagged().collect(),
    }
}

fn optimize_cmd(path: &Path, run: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let file = load_scenario(path, run)?;
    let dir = out_dir(run)?;
    let snapshot = file.snapshot()?;
    let mut config = file.optimizer_config();
    if let Some(m) = run.samples {
        config.inner_samples = m;
    }
    let start = Instant::now();
    let res = optimize(&snapshot, &config)?;
    let wall = start.elapsed().as_secs_f64();

    write_json(&dir.join("clearances.json"), &res.report.clearances)?;
    write_json(
        &dir.join("report.json"),
        &OptimizeReport {
            status: res.status,
            evaluations: res.evaluations,
            decision: &res.decision,
            baseline: summary(&res.baseline),
            report: &res.report,
        },
    )?;
    write_csv(
        &dir.join("history.csv"),
        &res.history,
        &[
            "iteration",
            "best_objective",
            "best_feasible",
            "best_excess",
        ],
    )?;

    let w = |e| Failure::usage(format!("stdout: {e}"));
    writeln!(out, "status: {:?}", res.status).map_err(w)?;
    writeln!(
        out,
        "delay cost {} (baseline {}), max congestion {} (baseline {}), {} evaluations in {:.3} s",
        res.report.delay_cost,
        res.baseline.delay_cost,
        res.report.max_congestion,
        res.baseline.max_congestion,
        res.evaluations,
        wall
    )
    .map_err(w)?;
    for d in res.decision.flights.iter() {
        let plan = snapshot
            .plans
            .iter()
            .find(|p| p.id == d.flight)
            .expect("decision flight exists");
        for (e, &s) in d.shifts.iter().enumerate() {
            if s != 0.0 {
                writeln!(
                    out,
                    "regulate {} edge {}: {:+}",
                    d.flight,
                    plan.edges[e].label(),
                    s
                )
                .map_err(w)?;
            }
        }
        if d.route != plan.active_route {
            writeln!(out, "reroute {} to route {}", d.flight, d.route).map_err(w)?;
        }
    }
    Ok(match res.status {
        OptimizeStatus::NoFeasibleSolution => EXIT_INFEASIBLE,
        _ => EXIT_OK,
    })
}

/// A line of the event file that did not parse, with its message.
pub type LineError = (usize, String);

/// Reads a JSON-lines event file; blank lines are skipped.
pub fn read_events(path: &Path) -> Result<(Vec<SourcedEvent>, Vec<LineError>), Failure> {
    let f = File::open(path).map_err(|e| io_failure(path, e))?;
    let mut events = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_failure(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ObservationEvent>(&line) {
            Ok(event) => events.push(SourcedEvent { line: i + 1, event }),
            Err(e) => errors.push((i + 1, e.to_string())),
        }
    }
    Ok((events, errors))
}

#[derive(Debug, Serialize)]
struct FlightState<'a> {
    flight: &'a str,
    route: usize,
    expected_arrival: f64,
    arrival_variance: f64,
    anchor: Option<&'a Anchor>,
}

#[derive(Debug, Serialize)]
struct StateLine<'a> {
    version: u64,
    timestamp: Option<f64>,
    flights: Vec<FlightState<'a>>,
    congestion: Vec<CongestionRow>,
}

fn monitor(
    path: &Path,
    run: &RunArgs,
    events: &Path,
    strict: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let file = load_scenario(path, run)?;
    let dir = out_dir(run)?;
    let (events, parse_errors) = read_events(events)?;
    for (line, msg) in &parse_errors {
        let _ = writeln!(err, "event line {line}: {msg}");
    }
    if strict {
        if let Some((line, msg)) = parse_errors.first() {
            return Err(Failure::usage(format!("event line {line}: {msg}")));
        }
    }
    let mut setup = file.loop_setup()?;
    setup.policy.strict = strict;
    let plans: Vec<FlightPlan> = file.flights.clone();
    let state = AirspaceState::new(plans, file.propagator())?;

    let clearance_path = dir.join("clearances.jsonl");
    let state_path = dir.join("state.jsonl");
    let mut clearances =
        BufWriter::new(File::create(&clearance_path).map_err(|e| io_failure(&clearance_path, e))?);
    let mut states =
        BufWriter::new(File::create(&state_path).map_err(|e| io_failure(&state_path, e))?);
    let mut io_error: Option<Failure> = None;
    let epsilon = setup.optimizer.epsilon;
    let result = run_loop(
        state,
        &events,
        &setup,
        |state: &AirspaceState, step: &LoopStep| {
            if io_error.is_some() {
                return;
            }
            for e in &step.errors {
                let _ = writeln!(err, "event line {}: {}", e.line, e.message);
            }
            let line = StateLine {
                version: state.version,
                timestamp: step.timestamp,
                flights: state
                    .plans
                    .iter()
                    .zip(&state.beliefs)
                    .map(|(p, b)| FlightState {
                        flight: &p.id,
                        route: p.active_route,
                        expected_arrival: b.arrival().expectation(),
                        arrival_variance: b.arrival().variance(),
                        anchor: b.anchor.as_ref(),
                    })
                    .collect(),
                congestion: state
                    .congestion(&setup.sectors, &setup.slicing, epsilon)
                    .entries
                    .iter()
                    .map(CongestionRow::from)
                    .collect(),
            };
            let written = serde_json::to_string(step)
                .map_err(|e| e.to_string())
                .and_then(|s| {
                    writeln!(clearances, "{s}")
                        .and_then(|_| writeln!(out, "{s}"))
                        .map_err(|e| e.to_string())
                })
                .and_then(|_| serde_json::to_writer(&mut states, &line).map_err(|e| e.to_string()))
                .and_then(|_| writeln!(states).map_err(|e| e.to_string()));
            if let Err(e) = written {
                io_error = Some(Failure::usage(format!("writing monitor output: {e}")));
            }
        },
    );
    clearances
        .flush()
        .map_err(|e| io_failure(&clearance_path, e))?;
    states.flush().map_err(|e| io_failure(&state_path, e))?;
    if let Some(f) = io_error {
        return Err(f);
    }
    result?;
    Ok(EXIT_OK)
}
