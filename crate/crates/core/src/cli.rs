//! The `mas-abstract` command line: scenario ingestion, the example
//! workflows and file exports. Every invocation writes one run directory
//! with a `manifest.json` holding the resolved configuration.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::abstraction::{self, AbstractionError, CellConfig, ConfigEnumerator};
use crate::discretization::{self, DiscretizationError, DiscretizationParams, PlanningConstants};
use crate::dynamics::{AgentId, DynamicsError, ExampleSystem};
use crate::geometry::{CellDecomposition, CellId, GeometryError};
use crate::linalg::{self, Point};
use crate::reachability::{self, InputFamily, OnDemand, PiecewiseInput, ReachError, ReachSet};
use crate::scenario::{Resolved, Scenario, ScenarioError};
use crate::simulate::{self, Chooser};
use crate::svg::{SvgCanvas, PALETTE};
use crate::workflow::{self, ExampleSetup, TargetBox, WorkflowError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "mas-abstract",
    version,
    about = "Decentralized abstractions of coupled multi-agent systems"
)]
pub struct Cli {
    /// Run directory (default: `runs/<command>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Relative tolerance of the adaptive RK4 substep selection.
    #[arg(long, global = true)]
    pub tol_ode: Option<f64>,
    /// Use the open ball for W (deterministic transition systems).
    #[arg(long, global = true)]
    pub open_w: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Admissible (d_max, dt) intervals and the chosen discretization.
    Discretize(DiscretizeArgs),
    /// Build the controlled transition system of one agent.
    Abstract(AbstractArgs),
    /// Closed-loop run with the hybrid feedback.
    Simulate(SimulateArgs),
    /// Forward, backward or robust reach sets of one agent.
    Reach(ReachArgs),
    /// Randomized transition-soundness campaign.
    Verify(VerifyArgs),
    /// End-to-end run of the four-agent example.
    Example(ExampleArgs),
}

/// Scenario file, or the built-in four-agent preset.
#[derive(Debug, Args, Clone)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 10.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 2.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct DiscretizeArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 2.0)]
    pub horizon: f64,
    /// Closed-form example bounds instead of the general intervals.
    #[arg(long)]
    pub example_mode: bool,
    #[arg(long = "M")]
    pub m: Option<f64>,
    #[arg(long)]
    pub vmax: Option<f64>,
    /// Combined Lipschitz constant.
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long)]
    pub d_max: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 10.0)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct AbstractArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub agent: AgentId,
    /// JSON list of configurations, or `auto` for every configuration whose
    /// cells lie near the initial cells.
    #[arg(long, default_value = "auto")]
    pub configs: String,
    /// Distance used by `--configs auto` (default: d_max).
    #[arg(long)]
    pub auto_distance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ChooserKind {
    /// Smallest-norm `w` among the action classes.
    Min,
    Random,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = ChooserKind::Min)]
    pub chooser: ChooserKind,
    /// Also write `(t, χ, k1, k2, k3)` per controlled agent.
    #[arg(long)]
    pub trace_controller: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachMode {
    Forward,
    Backward,
    Robust,
}

#[derive(Debug, Args)]
pub struct ReachArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = ReachMode::Forward)]
    pub mode: ReachMode,
    #[arg(long)]
    pub agent: AgentId,
    #[arg(long)]
    pub steps: Option<usize>,
    /// JSON `[step][neighbor slot] -> [cells]`; forward and backward modes
    /// need exactly one cell per slot.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Target box `lo_0,…,lo_n,hi_0,…,hi_n` for backward mode.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub target: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 50)]
    pub configs: usize,
    #[arg(long, default_value_t = 2)]
    pub trials: usize,
    /// Multiplies dt and drops the admissibility certificate when != 1.
    #[arg(long, default_value_t = 1.0)]
    pub dt_factor: f64,
    #[arg(long)]
    pub neighbor_radius: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub property_samples: usize,
    /// Repeat each trial with doubled substeps and report the change.
    #[arg(long)]
    pub refine: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum CaseKind {
    #[value(name = "I")]
    I,
    #[value(name = "II")]
    II,
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = CaseKind::I)]
    pub case: CaseKind,
    #[arg(long, default_value_t = 10.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 10.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 2.0)]
    pub horizon: f64,
    /// Configurations in the verification sample.
    #[arg(long, default_value_t = 20)]
    pub verify_configs: usize,
}

/// Pretty JSON with every float printed to 17 significant digits, so seeded
/// runs are byte-identical.
struct FixedFloat(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for FixedFloat {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes with fixed float formatting.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat(Default::default()));
    value.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// One output directory.
struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    fn create(path: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(RunDir { path, files: vec![] })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let p = self.path.join(name);
        fs::write(&p, body).map_err(|source| CliError::Io { path: p, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.text(name, &to_json(value))
    }

    fn finish(mut self, cli: &Cli, command: &str, config: serde_json::Value) -> Result<PathBuf, CliError> {
        self.files.sort();
        let manifest = json!({
            "tool": "mas-abstract",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cli.seed,
            "tol_ode": cli.tol_ode,
            "open_w": cli.open_w,
            "config": config,
            "files": self.files,
        });
        let p = self.path.join("manifest.json");
        fs::write(&p, to_json(&manifest)).map_err(|source| CliError::Io { path: p, source })?;
        Ok(self.path)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Json {
        path: path.to_path_buf(),
        message: format!("{}: {}", e.path(), e.inner()),
    })
}

impl ScenarioArgs {
    fn load(&self, cli: &Cli) -> Result<Scenario, CliError> {
        let mut s = match &self.scenario {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                    path: p.clone(),
                    source,
                })?;
                Scenario::from_json(&text)?
            }
            None => Scenario::preset(self.lambda, self.rho, self.radius, self.horizon),
        };
        if cli.tol_ode.is_some() {
            s.tol_ode = cli.tol_ode;
        }
        if s.seed.is_none() {
            s.seed = Some(cli.seed);
        }
        Ok(s)
    }
}

/// Constant input of the preset's decoupled agent, scaled with `ρ`.
fn drifter_input(rho: f64) -> PiecewiseInput {
    PiecewiseInput::constant(linalg::scale(&ExampleSystem::drifter_input(), rho / 10.0))
}

/// Inputs of the agents that run open loop: the preset's decoupled agent.
fn free_inputs(res: &Resolved) -> Vec<Option<PiecewiseInput>> {
    let mut free = vec![None; res.net.len()];
    if let Some(ex) = &res.example {
        free[ExampleSystem::DRIFTER] = Some(drifter_input(ex.system.rho));
    }
    free
}

fn initial_cells(res: &Resolved) -> Result<Vec<CellId>, CliError> {
    Ok(res.x0.iter().map(|p| res.dec.locate(p)).collect::<Result<_, _>>()?)
}

fn reach_svg(dec: &CellDecomposition, sets: &[(usize, &ReachSet)], paths: &[Vec<Point>]) -> String {
    let mut c = SvgCanvas::new(dec.domain(), 600.0);
    c.domain(dec.domain());
    for &(agent, r) in sets {
        c.cells(dec, &r.union(), PALETTE[agent % PALETTE.len()], 0.25);
        c.cells(dec, r.last(), PALETTE[agent % PALETTE.len()], 0.7);
    }
    for (i, p) in paths.iter().enumerate() {
        c.polyline(p, PALETTE[i % PALETTE.len()]);
        if let Some(first) = p.first() {
            c.marker(first, "black").label(first, &i.to_string());
        }
    }
    c.finish()
}

/// Parses arguments and runs the command. Returns the run directory.
pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let name = match &cli.command {
        Command::Discretize(_) => "discretize",
        Command::Abstract(_) => "abstract",
        Command::Simulate(_) => "simulate",
        Command::Reach(_) => "reach",
        Command::Verify(_) => "verify",
        Command::Example(_) => "example",
    };
    let out = RunDir::create(cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name)))?;
    let (out, config) = match &cli.command {
        Command::Discretize(a) => cmd_discretize(&cli, a, out)?,
        Command::Abstract(a) => cmd_abstract(&cli, a, out)?,
        Command::Simulate(a) => cmd_simulate(&cli, a, out)?,
        Command::Reach(a) => cmd_reach(&cli, a, out)?,
        Command::Verify(a) => cmd_verify(&cli, a, out)?,
        Command::Example(a) => cmd_example(&cli, a, out)?,
    };
    out.finish(&cli, name, config)
}

type Outcome = Result<(RunDir, serde_json::Value), CliError>;

fn params_json(p: &DiscretizationParams, nt: usize, dec: Option<&CellDecomposition>) -> serde_json::Value {
    let mut v = json!({
        "case": discretization::classify_case(p.lambda, p.mu).ok(),
        "certificate": p.certificate,
        "lambda": p.lambda,
        "mu": p.mu,
        "d_max": p.d_max,
        "dt": p.dt,
        "r": p.r,
        "R_max": p.r_max,
        "NT": nt,
        "min_transitions": discretization::min_transitions(p.mu, dec.map_or(2, |d| d.dim())).max(1),
    });
    if let Some(d) = dec {
        v["grid"] = json!({
            "side": d.side(),
            "cells": d.len(),
            "counts": d.grid_counts(),
            "d_max": d.d_max(),
            "d_in": d.d_in(),
        });
    }
    v
}

fn cmd_discretize(cli: &Cli, a: &DiscretizeArgs, mut out: RunDir) -> Outcome {
    let report = if let Some(path) = &a.scenario {
        let s = ScenarioArgs {
            scenario: Some(path.clone()),
            lambda: a.lambda,
            rho: a.rho,
            radius: a.radius,
            horizon: a.horizon,
        }
        .load(cli)?;
        let res = s.resolve()?;
        let c = PlanningConstants::new(res.params.m, res.params.v_max, res.params.l)?;
        json!({
            "constants": c,
            "d_max_cap": discretization::dmax_cap(res.params.lambda, &c),
            "d_max_intervals": discretization::admissible_dmax_interval(res.params.lambda, res.params.mu, &c)?,
            "chosen": params_json(&res.params, res.nt, Some(&res.dec)),
        })
    } else if a.example_mode {
        let setup = ExampleSetup::new(a.lambda, a.rho, a.radius, a.horizon)?;
        json!({
            "constants": setup.constants,
            "dt_bar": setup.dt_bar,
            "d_max_bound": setup.d_max_bound,
            "chosen": params_json(&setup.params, setup.nt, Some(&setup.dec)),
        })
    } else {
        let c = match (a.m, a.vmax, a.l) {
            (Some(m), Some(v), Some(l)) => PlanningConstants::new(m, v, l)?,
            (None, None, None) => PlanningConstants::from_network(&ExampleSystem::new(a.rho, a.radius)?.network)?,
            _ => return Err(CliError::Usage("give all of --M, --vmax and --L, or none".into())),
        };
        let ivs = discretization::admissible_dmax_interval(a.lambda, a.mu, &c)?;
        let widest = ivs.iter().map(|iv| iv.hi).fold(0.0, f64::max);
        let d = a.d_max.unwrap_or(0.5 * widest);
        let dt_iv = discretization::admissible_dt_interval(a.lambda, a.mu, &c, d)?;
        let dt = a.dt.unwrap_or(dt_iv.hi);
        let p = DiscretizationParams::general(a.lambda, a.mu, &c, d, dt, 2.0 * a.radius)?;
        let nt = (a.horizon / dt).ceil().max(1.0) as usize;
        json!({
            "constants": c,
            "d_max_cap": discretization::dmax_cap(a.lambda, &c),
            "d_max_intervals": ivs,
            "dt_interval": dt_iv,
            "chosen": params_json(&p, nt, None),
        })
    };
    print!("{}", to_json(&report));
    out.json("discretization.json", &report)?;
    Ok((out, report))
}

fn auto_configs(res: &Resolved, agent: AgentId, distance: f64) -> Result<Vec<CellConfig>, CliError> {
    let cells = initial_cells(res)?;
    let mut slots = vec![abstraction::cells_within(&res.dec, &[cells[agent]], distance)];
    for &j in res.net.neighbors(agent) {
        slots.push(abstraction::cells_within(&res.dec, &[cells[j]], distance));
    }
    Ok(ConfigEnumerator::Product(slots).configs(res.dec.len(), slots_width(res, agent))?)
}

fn slots_width(res: &Resolved, agent: AgentId) -> usize {
    res.net.neighbors(agent).len() + 1
}

fn check_agent(res: &Resolved, agent: AgentId) -> Result<(), CliError> {
    if agent >= res.net.len() {
        return Err(CliError::Usage(format!(
            "agent {agent} out of range ({} agents)",
            res.net.len()
        )));
    }
    Ok(())
}

fn cmd_abstract(cli: &Cli, a: &AbstractArgs, mut out: RunDir) -> Outcome {
    let s = a.scenario.load(cli)?;
    let res = s.resolve()?;
    check_agent(&res, a.agent)?;
    let configs: Vec<CellConfig> = if a.configs == "auto" {
        auto_configs(&res, a.agent, a.auto_distance.unwrap_or(res.params.d_max))?
    } else {
        read_json(Path::new(&a.configs))?
    };
    let ctx = res.context(cli.open_w);
    let ts = ctx.build_controlled_ts(a.agent, &ConfigEnumerator::Explicit(configs))?;
    let summary = json!({
        "agent": a.agent,
        "configs": ts.len(),
        "built": ts.built_count(),
        "flagged": ts.flagged_count(),
        "edges": ts.edge_count(),
        "states": ts.states().len(),
    });
    println!(
        "agent {}: {} configurations ({} flagged), {} edges",
        a.agent,
        ts.len(),
        ts.flagged_count(),
        ts.edge_count()
    );
    out.json("ts.json", &ts.to_json())?;
    out.text("ts.csv", &ts.to_csv())?;
    out.text("ts.dot", &ts.to_dot())?;
    out.json("summary.json", &summary)?;
    Ok((out, json!({ "scenario": s, "params": res.params, "nt": res.nt })))
}

fn chooser(kind: ChooserKind, seed: u64) -> Chooser<'static> {
    match kind {
        ChooserKind::Min => simulate::min_input_chooser(),
        ChooserKind::Random => simulate::random_chooser(ChaCha8Rng::seed_from_u64(seed)),
    }
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, mut out: RunDir) -> Outcome {
    let s = a.scenario.load(cli)?;
    let res = s.resolve()?;
    let steps = a.steps.unwrap_or(res.nt);
    let run = workflow::closed_loop(
        res.context(cli.open_w),
        steps,
        &res.x0,
        &free_inputs(&res),
        chooser(a.chooser, cli.seed),
        true,
    )?;
    let validation = run.validate(res.params.v_max);
    let n = res.net.len();
    let distances: Vec<serde_json::Value> = (0..n)
        .flat_map(|i| res.net.neighbors(i).iter().map(move |&j| (i, j)))
        .map(|(i, j)| json!({ "agents": [i, j], "max_distance": run.max_distance(i, j) }))
        .collect();
    let summary = json!({
        "steps": run.steps,
        "dt": run.dt,
        "valid": validation.is_ok(),
        "error": validation.as_ref().err().map(|e| e.to_string()),
        "max_k": run.max_k,
        "min_margin": run.min_margin,
        "levels": run.levels,
        "cells": run.cells,
        "neighbor_distances": distances,
    });
    match &validation {
        Ok(()) => println!("{} steps, invariance and input bound hold", run.steps),
        Err(e) => println!("{} steps, violation: {e}", run.steps),
    }
    out.text("trace.csv", &run.trace_csv())?;
    if a.trace_controller {
        out.text("controller.csv", &run.controller_csv())?;
    }
    out.json("summary.json", &summary)?;
    let paths: Vec<Vec<Point>> = (0..n)
        .map(|i| run.trace.iter().map(|r| r.x[i].clone()).collect())
        .collect();
    out.text("trajectories.svg", &reach_svg(&res.dec, &[], &paths))?;
    Ok((
        out,
        json!({ "scenario": s, "params": res.params, "steps": steps, "chooser": format!("{:?}", a.chooser) }),
    ))
}

fn target_box(res: &Resolved, agent: AgentId, v: &[f64]) -> Result<TargetBox, CliError> {
    let n = res.net.dim;
    if v.len() != 2 * n {
        return Err(CliError::Usage(format!(
            "--target needs {} numbers, got {}",
            2 * n,
            v.len()
        )));
    }
    Ok(TargetBox {
        agent,
        lo: v[..n].to_vec(),
        hi: v[n..].to_vec(),
    })
}

fn singletons(sets: &[Vec<Vec<CellId>>]) -> Result<Vec<Vec<CellId>>, CliError> {
    sets.iter()
        .enumerate()
        .map(|(k, slots)| {
            slots
                .iter()
                .map(|s| match s.as_slice() {
                    [c] => Ok(*c),
                    _ => Err(CliError::Usage(format!(
                        "trace step {k}: forward and backward modes need one cell per neighbor"
                    ))),
                })
                .collect()
        })
        .collect()
}

fn cmd_reach(cli: &Cli, a: &ReachArgs, mut out: RunDir) -> Outcome {
    let s = a.scenario.load(cli)?;
    let res = s.resolve()?;
    check_agent(&res, a.agent)?;
    let steps = a.steps.unwrap_or(res.nt);
    let target = a.target.as_deref().map(|v| target_box(&res, a.agent, v)).transpose()?;
    if a.mode == ReachMode::Backward && target.is_none() && a.trace.is_some() {
        return Err(CliError::Usage("backward mode needs --target".into()));
    }
    let mut paths = vec![];
    let set = if let Some(path) = &a.trace {
        let sets: Vec<Vec<Vec<CellId>>> = read_json(path)?;
        let sets = &sets[..steps.min(sets.len())];
        let q0 = initial_cells(&res)?[a.agent];
        let mut src = OnDemand::new(res.context(cli.open_w), a.agent);
        match a.mode {
            ReachMode::Forward => reachability::forward_reach(&mut src, &[q0], &singletons(sets)?)?,
            ReachMode::Backward => {
                let trace = singletons(sets)?;
                let f = reachability::forward_reach(&mut src, &[q0], &trace)?;
                let t = target.expect("checked above");
                let goal = workflow::cells_in_box(&res.dec, &t.lo, &t.hi);
                reachability::backward_reach(&mut src, &goal, &trace, Some(&f))?
            }
            ReachMode::Robust => reachability::robust_reach(&mut src, &[q0], sets)?,
        }
    } else if let Some(ex) = &res.example {
        let mut setup = ex.clone();
        setup.nt = steps;
        let drifter = ExampleSystem::DRIFTER;
        match a.mode {
            ReachMode::Forward | ReachMode::Backward => {
                let mut targets = workflow::illustrative_targets();
                if let Some(t) = target {
                    targets.retain(|b| b.agent != a.agent);
                    targets.push(t);
                }
                let one = workflow::case_one(&setup, &res.x0, &drifter_input(ex.system.rho), &targets, cli.open_w)?;
                paths.push(one.drifter_states.clone());
                if a.agent == drifter {
                    ReachSet {
                        steps: one.drifter_cells.iter().map(|&c| vec![c]).collect(),
                    }
                } else if a.mode == ReachMode::Forward || a.agent == 3 {
                    one.forward[a.agent].clone().expect("followers computed")
                } else {
                    one.backward[a.agent].clone().expect("targets cover agents 0 and 2")
                }
            }
            ReachMode::Robust => {
                let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
                let two = workflow::case_two(&setup, &res.x0, &s.family(), &[a.agent], cli.open_w, &mut rng)?;
                if a.agent == drifter {
                    ReachSet {
                        steps: two.envelope.dilated.clone(),
                    }
                } else {
                    two.reach[a.agent].clone().expect("requested agent computed")
                }
            }
        }
    } else if res.net.neighbors(a.agent).is_empty() {
        let q0 = initial_cells(&res)?[a.agent];
        let mut src = OnDemand::new(res.context(cli.open_w), a.agent);
        let trace = vec![vec![]; steps];
        match a.mode {
            ReachMode::Forward => reachability::forward_reach(&mut src, &[q0], &trace)?,
            ReachMode::Robust => reachability::robust_reach(&mut src, &[q0], &vec![vec![]; steps])?,
            ReachMode::Backward => {
                let t = target.ok_or_else(|| CliError::Usage("backward mode needs --target".into()))?;
                let f = reachability::forward_reach(&mut src, &[q0], &trace)?;
                let goal = workflow::cells_in_box(&res.dec, &t.lo, &t.hi);
                reachability::backward_reach(&mut src, &goal, &trace, Some(&f))?
            }
        }
    } else {
        return Err(CliError::Usage(format!(
            "agent {} has neighbors; pass their cells with --trace",
            a.agent
        )));
    };
    println!(
        "{:?} reach of agent {} over {} steps: final set has {} cells",
        a.mode,
        a.agent,
        set.steps.len().saturating_sub(1),
        set.last().len()
    );
    let report = json!({
        "mode": a.mode,
        "agent": a.agent,
        "sizes": set.steps.iter().map(Vec::len).collect::<Vec<_>>(),
        "steps": set.steps,
    });
    out.json("reach.json", &report)?;
    out.text("reach.svg", &reach_svg(&res.dec, &[(a.agent, &set)], &paths))?;
    Ok((
        out,
        json!({ "scenario": s, "params": res.params, "mode": a.mode, "agent": a.agent, "steps": steps }),
    ))
}

fn cmd_verify(cli: &Cli, a: &VerifyArgs, mut out: RunDir) -> Outcome {
    let s = a.scenario.load(cli)?;
    let mut res = s.resolve()?;
    if a.dt_factor != 1.0 {
        let c = PlanningConstants::new(res.params.m, res.params.v_max, res.params.l)?;
        res.params = DiscretizationParams::unchecked(
            res.params.lambda,
            res.params.mu,
            &c,
            res.params.d_max,
            res.params.dt * a.dt_factor,
        );
    }
    let radius = a.neighbor_radius.unwrap_or(f64::INFINITY);
    let campaign = workflow::transition_campaign(
        &res.context(cli.open_w),
        a.configs,
        a.trials,
        radius,
        a.property_samples,
        a.refine,
        cli.seed,
    )?;
    println!(
        "{} of {} trials passed; max |k| {:.6} on trajectories, {:.6} in property samples (v_max {})",
        campaign.passed,
        campaign.trials.len(),
        campaign.max_k,
        campaign.property_max_k,
        res.params.v_max
    );
    out.json("verdict.json", &campaign)?;
    Ok((
        out,
        json!({
            "scenario": s,
            "params": res.params,
            "configs": a.configs,
            "trials": a.trials,
            "dt_factor": a.dt_factor,
            "neighbor_radius": a.neighbor_radius,
            "property_samples": a.property_samples,
            "refine": a.refine,
        }),
    ))
}

fn per_step_json(r: &Option<ReachSet>) -> serde_json::Value {
    match r {
        Some(r) => json!({ "sizes": r.steps.iter().map(Vec::len).collect::<Vec<_>>(), "steps": r.steps }),
        None => serde_json::Value::Null,
    }
}

fn cmd_example(cli: &Cli, a: &ExampleArgs, mut out: RunDir) -> Outcome {
    let mut setup = ExampleSetup::new(a.lambda, a.rho, a.radius, a.horizon)?;
    if let Some(tol) = cli.tol_ode {
        setup.integ = crate::integrator::Integrator::with_tol(tol);
    }
    let x0: Vec<Point> = ExampleSystem::initial_states()
        .into_iter()
        .map(|p| linalg::scale(&p, a.rho / 10.0))
        .collect();
    setup.check_initial(&x0)?;
    let input = drifter_input(a.rho);
    let grid = json!({
        "side": setup.dec.side(),
        "cells": setup.dec.len(),
        "d_max": setup.dec.d_max(),
        "dt_bar": setup.dt_bar,
        "dt": setup.dt,
        "NT": setup.nt,
        "r": setup.params.r,
        "R_max": setup.params.r_max,
    });
    println!(
        "grid side {:.6}, {} cells, d_max {:.6}, dt {:.6}, NT = {}",
        setup.dec.side(),
        setup.dec.len(),
        setup.dec.d_max(),
        setup.dt,
        setup.nt
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (reach, sets, paths) = match a.case {
        CaseKind::I => {
            let targets = workflow::illustrative_targets();
            let one = workflow::case_one(&setup, &x0, &input, &targets, cli.open_w)?;
            let reach = json!({
                "targets": targets,
                "targets_note": "illustrative defaults",
                "drifter_cells": one.drifter_cells,
                "forward": one.forward.iter().map(per_step_json).collect::<Vec<_>>(),
                "backward": one.backward.iter().map(per_step_json).collect::<Vec<_>>(),
                "built_configs": one.built,
            });
            let sets: Vec<(usize, ReachSet)> = one
                .forward
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.clone().map(|r| (i, r)))
                .collect();
            (reach, sets, vec![one.drifter_states])
        }
        CaseKind::II => {
            let two = workflow::case_two(
                &setup,
                &x0,
                &InputFamily::example_switching(),
                &[0, 2, 3],
                cli.open_w,
                &mut rng,
            )?;
            let reach = json!({
                "envelope": {
                    "trajectories": two.envelope.trajectories,
                    "raw_sizes": two.envelope.raw.iter().map(Vec::len).collect::<Vec<_>>(),
                    "dilated_sizes": two.envelope.dilated.iter().map(Vec::len).collect::<Vec<_>>(),
                    "dilated": two.envelope.dilated,
                },
                "robust": two.reach.iter().map(per_step_json).collect::<Vec<_>>(),
                "built_configs": two.built,
            });
            let sets: Vec<(usize, ReachSet)> = two
                .reach
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.clone().map(|r| (i, r)))
                .collect();
            (reach, sets, vec![])
        }
    };
    for (agent, r) in &sets {
        println!("agent {agent}: final reach set has {} cells", r.last().len());
    }

    let run = workflow::example_closed_loop(&setup, &x0, &input, simulate::min_input_chooser(), true)?;
    let validation = run.validate(setup.params.v_max);
    let pairs: Vec<serde_json::Value> = ExampleSystem::connected_pairs()
        .iter()
        .map(|&(i, j)| json!({ "agents": [i, j], "max_distance": run.max_distance(i, j) }))
        .collect();
    let ctx = setup.context().with_open_w(cli.open_w);
    let campaign = workflow::transition_campaign(&ctx, a.verify_configs, 2, f64::INFINITY, 64, false, cli.seed)?;
    let verdict = json!({
        "closed_loop": {
            "valid": validation.is_ok(),
            "error": validation.as_ref().err().map(|e| e.to_string()),
            "max_k": run.max_k,
            "connected_pairs": pairs,
        },
        "transitions": {
            "trials": campaign.trials.len(),
            "passed": campaign.passed,
            "max_k": campaign.max_k,
            "property_max_k": campaign.property_max_k,
            "worst_endpoint_ratio": campaign.worst_endpoint_ratio,
        },
    });
    println!(
        "closed loop {}; {} of {} transition trials passed",
        if validation.is_ok() { "valid" } else { "INVALID" },
        campaign.passed,
        campaign.trials.len()
    );

    out.json("grid.json", &grid)?;
    out.json("reach.json", &reach)?;
    out.json("verdict.json", &verdict)?;
    out.text("trace.csv", &run.trace_csv())?;
    let refs: Vec<(usize, &ReachSet)> = sets.iter().map(|(i, r)| (*i, r)).collect();
    let mut all_paths = paths;
    all_paths.extend((0..x0.len()).map(|i| run.trace.iter().map(|r| r.x[i].clone()).collect()));
    out.text("reach.svg", &reach_svg(&setup.dec, &refs, &all_paths))?;
    Ok((
        out,
        json!({
            "lambda": a.lambda,
            "case": a.case,
            "rho": a.rho,
            "radius": a.radius,
            "horizon": a.horizon,
            "initial_states": x0,
            "params": setup.params,
            "verify_configs": a.verify_configs,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json(&json!({ "a": 0.1, "b": [1.0, -2.5e-300], "c": 3 }));
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("-2.5000000000000000e-300"), "{s}");
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
        assert_eq!(back["c"].as_u64(), Some(3));
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "mas-abstract",
            "--seed",
            "4",
            "discretize",
            "--lambda",
            "0.3",
            "--mu",
            "0",
            "--M",
            "15",
            "--vmax",
            "5",
            "--L",
            "10",
        ])
        .unwrap();
        assert_eq!(cli.seed, 4);
        let Command::Discretize(a) = cli.command else { panic!() };
        assert_eq!((a.m, a.vmax, a.l), (Some(15.0), Some(5.0), Some(10.0)));
        let cli = Cli::try_parse_from([
            "mas-abstract",
            "reach",
            "--mode",
            "robust",
            "--agent",
            "2",
            "--target",
            "-1,-1,1,1",
        ])
        .unwrap();
        let Command::Reach(a) = cli.command else { panic!() };
        assert_eq!(a.target, Some(vec![-1.0, -1.0, 1.0, 1.0]));
        assert!(Cli::try_parse_from(["mas-abstract", "example", "--case", "III"]).is_err());
    }
}
