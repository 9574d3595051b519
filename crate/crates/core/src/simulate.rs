//! Closed-loop integration of the full network under hybrid feedback, with
//! controllers rebuilt at every multiple of `δt`, plus single-transition
//! verification and path replay.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{
    self, AbstractionContext, AbstractionError, ActionClass, CellConfig, ConfigStatus, ControlledTs,
};
use crate::controller::{self, ControllerError, ControllerInstance, ReferencePoints};
use crate::dynamics::{AgentId, AgentNetwork};
use crate::geometry::{CellDecomposition, CellId, Domain, GeometryError};
use crate::integrator;
use crate::linalg::{self, Point};
use crate::reachability::{DiscretePath, PiecewiseInput, PostSource};

/// Endpoint tolerance factor: a trial passes when
/// `|x_i(δt) − (χ_i(δt) + δt w)| ≤ ENDPOINT_TOL · (1 + |χ_i(δt)|)`.
pub const ENDPOINT_TOL: f64 = 1e-6;
/// Slack on the input bound `|k_i| ≤ v_max`.
pub const INPUT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error("agent {agent} left the domain at t = {time} (margin {margin:e})")]
    InvarianceViolation { agent: AgentId, time: f64, margin: f64 },
    #[error("agent {agent}: |k| = {k} exceeds v_max = {v_max} at t = {time}")]
    Consistency {
        agent: AgentId,
        time: f64,
        k: f64,
        v_max: f64,
    },
    #[error("replay failed at step {step}: agent {agent} is not in cell {cell}")]
    ReplayMiss { step: usize, agent: AgentId, cell: CellId },
    #[error("step {step}: agent {agent} has no transition {config:?} -> {successor}")]
    NoTransition {
        step: usize,
        agent: AgentId,
        config: CellConfig,
        successor: CellId,
    },
    #[error("step {step}: agent {agent} has no successor from {config:?}")]
    Stuck {
        step: usize,
        agent: AgentId,
        config: CellConfig,
    },
    #[error("expected {expected} entries, got {got}")]
    Arity { expected: usize, got: usize },
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How an agent is driven over one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AgentMode {
    /// Hybrid feedback; the input is `k_{i,ℓ_i}(t, x_i, x_j; x_0, w)`.
    Controlled(ControllerInstance),
    /// Open-loop input as a function of absolute time.
    Free(PiecewiseInput),
    /// Frozen in place (`ẋ_i = 0`); used for agents outside a tested
    /// neighborhood.
    Idle,
}

/// One sampled node of a closed-loop trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vec<Point>,
    pub k: Vec<f64>,
    /// `χ_i(t)` of controlled agents.
    pub chi: Vec<Option<Point>>,
    /// `[k1, k2, k3]` of controlled agents.
    pub terms: Vec<Option<[Point; 3]>>,
}

/// Result of integrating one `δt` segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub dt: f64,
    pub level: u32,
    pub end: Vec<Point>,
    /// Co-integrated `χ_i(δt)` of every controlled agent.
    pub chi_end: Vec<Option<Point>>,
    pub max_k: Vec<f64>,
    /// Smallest domain margin seen, per agent.
    pub min_margin: Vec<f64>,
    /// First node outside `cl(D)` beyond `tol`, as `(agent, time)`.
    pub exit: Option<(AgentId, f64)>,
    pub trace: Vec<TraceRow>,
}

fn node_inputs(
    modes: &[AgentMode],
    net: &AgentNetwork,
    t0: f64,
    t: f64,
    x: &[&[f64]],
    chi: &[Option<&[f64]>],
) -> (Vec<f64>, Vec<Option<[Point; 3]>>) {
    modes
        .iter()
        .enumerate()
        .map(|(i, m)| match m {
            AgentMode::Controlled(inst) => {
                let xj: Vec<&[f64]> = net.neighbors(i).iter().map(|&j| x[j]).collect();
                let kt = inst.terms(net, t, x[i], &xj, chi[i].expect("controlled"));
                (linalg::norm(&kt.total()), Some([kt.k1, kt.k2, kt.k3]))
            }
            AgentMode::Free(u) => (linalg::norm(u.at(t0 + t)), None),
            AgentMode::Idle => (0.0, None),
        })
        .unzip()
}

/// Integrates all agents and all reference trajectories over `[t0, t0 + dt]`
/// with `2^level` RK4 steps (split proportionally at free-input switches).
#[allow(clippy::too_many_arguments)]
pub fn simulate_segment(
    net: &AgentNetwork,
    domain: &Domain,
    modes: &[AgentMode],
    x0: &[Point],
    t0: f64,
    dt: f64,
    level: u32,
    record: bool,
) -> Result<Segment, SimulateError> {
    let na = net.len();
    if modes.len() != na || x0.len() != na {
        return Err(SimulateError::Arity {
            expected: na,
            got: modes.len().min(x0.len()),
        });
    }
    let n = net.dim;
    // layout: x_0 … x_{N−1}, then χ of each controlled agent in agent order
    let mut chi_slot = vec![None; na];
    let mut y0: Vec<f64> = x0.iter().flatten().copied().collect();
    for (i, m) in modes.iter().enumerate() {
        if let AgentMode::Controlled(inst) = m {
            chi_slot[i] = Some(y0.len());
            y0.extend_from_slice(&inst.refs.own);
        }
    }
    let split = |y: &[f64]| -> (Vec<Vec<f64>>, Vec<Option<Vec<f64>>>) {
        let x = (0..na).map(|i| y[i * n..(i + 1) * n].to_vec()).collect();
        let c = chi_slot
            .iter()
            .map(|s| s.map(|k: usize| y[k..k + n].to_vec()))
            .collect();
        (x, c)
    };
    // free inputs are read at the start of the current sub-interval so a switch
    // at a cut never leaks into the preceding RK4 stages
    let piece_start = std::cell::Cell::new(0.0_f64);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let x: Vec<&[f64]> = (0..na).map(|i| &y[i * n..(i + 1) * n]).collect();
        for (i, m) in modes.iter().enumerate() {
            let xj: Vec<&[f64]> = net.neighbors(i).iter().map(|&j| x[j]).collect();
            let out = &mut dy[i * n..(i + 1) * n];
            match m {
                AgentMode::Controlled(inst) => {
                    let s = chi_slot[i].expect("controlled");
                    let chi = &y[s..s + n];
                    let mut f = net.eval_f_unchecked(i, x[i], &xj);
                    linalg::add_assign(&mut f, &inst.terms(net, t, x[i], &xj, chi).total());
                    out.copy_from_slice(&f);
                    let fc = controller::frozen_field(net, i, &inst.refs, chi);
                    dy[s..s + n].copy_from_slice(&fc);
                }
                AgentMode::Free(u) => {
                    let f = net.eval_f_unchecked(i, x[i], &xj);
                    for ((o, a), b) in out.iter_mut().zip(&f).zip(u.at(t0 + piece_start.get())) {
                        *o = a + b;
                    }
                }
                AgentMode::Idle => out.fill(0.0),
            }
        }
    };

    let mut cuts: Vec<f64> = modes
        .iter()
        .filter_map(|m| match m {
            AgentMode::Free(u) => Some(u.breaks.iter().map(|b| b - t0)),
            _ => None,
        })
        .flatten()
        .filter(|&b| b > 0.0 && b < dt)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(dt);

    let total = 1usize << level;
    let tol = 1e-12 * domain.diameter();
    let mut max_k = vec![0.0_f64; na];
    let mut min_margin = vec![f64::INFINITY; na];
    let mut exit = None;
    let mut trace = Vec::new();
    let mut observe = |t: f64, y: &[f64]| {
        let (x, c) = split(y);
        let xr: Vec<&[f64]> = x.iter().map(|p| p.as_slice()).collect();
        let cr: Vec<Option<&[f64]>> = c.iter().map(|p| p.as_deref()).collect();
        let (k, terms) = node_inputs(modes, net, t0, t, &xr, &cr);
        for i in 0..na {
            max_k[i] = max_k[i].max(k[i]);
            let m = domain.margin(&x[i]);
            min_margin[i] = min_margin[i].min(m);
            if exit.is_none() && m < -tol {
                exit = Some((i, t0 + t));
            }
        }
        if record {
            trace.push(TraceRow {
                t: t0 + t,
                x,
                k,
                chi: c,
                terms,
            });
        }
    };
    let mut y = y0;
    let mut t = 0.0;
    for (idx, &c) in cuts.iter().enumerate() {
        let steps = if cuts.len() == 1 {
            total
        } else {
            ((c - t) / dt * total as f64).ceil().max(1.0) as usize
        };
        let mut first = idx == 0;
        piece_start.set(t);
        y = integrator::run_fixed(&rhs, t, &y, c - t, steps, |tt, yy| {
            // interior cut nodes are shared by adjacent sub-intervals
            if first || tt > t {
                observe(tt, yy);
            }
            first = false;
        });
        t = c;
    }
    let (end, chi_end) = split(&y);
    Ok(Segment {
        t0,
        dt,
        level,
        end,
        chi_end,
        max_k,
        min_margin,
        exit,
        trace,
    })
}

/// Chooses the per-agent modes at the start of every step.
pub trait Policy {
    /// Modes for step `step` starting from states `x`, together with the
    /// cell configuration logged for that step.
    fn modes(&mut self, step: usize, x: &[Point]) -> Result<(Vec<AgentMode>, Vec<CellId>), SimulateError>;
}

/// Closed-loop run over `steps` multiples of `δt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRun {
    pub dt: f64,
    pub steps: usize,
    /// States at `m δt`, `m = 0 … steps`.
    pub nodes: Vec<Vec<Point>>,
    /// Cell configuration used at each step (one entry per agent).
    pub cells: Vec<Vec<CellId>>,
    /// Largest `|k_i|` per agent over the whole run.
    pub max_k: Vec<f64>,
    /// Largest `|k_i|` per step and agent.
    pub step_max_k: Vec<Vec<f64>>,
    pub min_margin: Vec<f64>,
    pub exit: Option<(AgentId, f64)>,
    pub levels: Vec<u32>,
    pub trace: Vec<TraceRow>,
}

impl ClosedLoopRun {
    /// Invariance and input-bound checks.
    pub fn validate(&self, v_max: f64) -> Result<(), SimulateError> {
        if let Some((agent, time)) = self.exit {
            return Err(SimulateError::InvarianceViolation {
                agent,
                time,
                margin: self.min_margin[agent],
            });
        }
        for (m, ks) in self.step_max_k.iter().enumerate() {
            for (agent, &k) in ks.iter().enumerate() {
                if k > v_max + INPUT_TOL {
                    return Err(SimulateError::Consistency {
                        agent,
                        time: m as f64 * self.dt,
                        k,
                        v_max,
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest distance between agents `a` and `b` over the recorded trace
    /// (or the step nodes when no trace was recorded).
    pub fn max_distance(&self, a: AgentId, b: AgentId) -> f64 {
        let rows: Box<dyn Iterator<Item = &Vec<Point>>> = if self.trace.is_empty() {
            Box::new(self.nodes.iter())
        } else {
            Box::new(self.trace.iter().map(|r| &r.x))
        };
        rows.map(|x| linalg::dist(&x[a], &x[b])).fold(0.0, f64::max)
    }

    /// Trace as CSV: `t, x_<i>_<d>…, k_<i>…`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.trace.first() else {
            return out;
        };
        let mut head = vec!["t".to_string()];
        for (i, p) in first.x.iter().enumerate() {
            head.extend((0..p.len()).map(|d| format!("x_{i}_{d}")));
        }
        head.extend((0..first.k.len()).map(|i| format!("k_{i}")));
        out.push_str(&head.join(","));
        out.push('\n');
        for r in &self.trace {
            let mut row = vec![format!("{:.16e}", r.t)];
            row.extend(r.x.iter().flatten().map(|v| format!("{v:.16e}")));
            row.extend(r.k.iter().map(|v| format!("{v:.16e}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

impl ClosedLoopRun {
    /// Controller internals as CSV: `t, agent, chi_<d>…, k1_<d>…, k2_<d>…, k3_<d>…`.
    pub fn controller_csv(&self) -> String {
        let mut out = String::new();
        let Some(dim) = self.trace.first().map(|r| r.x[0].len()) else {
            return out;
        };
        let mut head = vec!["t".to_string(), "agent".to_string()];
        for name in ["chi", "k1", "k2", "k3"] {
            head.extend((0..dim).map(|d| format!("{name}_{d}")));
        }
        out.push_str(&head.join(","));
        out.push('\n');
        for r in &self.trace {
            for (i, (c, k)) in r.chi.iter().zip(&r.terms).enumerate() {
                let (Some(c), Some(k)) = (c, k) else { continue };
                let mut row = vec![format!("{:.16e}", r.t), i.to_string()];
                row.extend(c.iter().chain(k.iter().flatten()).map(|v| format!("{v:.16e}")));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        out
    }
}

fn segment_level(modes: &[AgentMode], floor: u32) -> u32 {
    modes
        .iter()
        .filter_map(|m| match m {
            AgentMode::Controlled(inst) => Some(inst.level),
            _ => None,
        })
        .fold(floor, u32::max)
}

/// Runs `steps` hybrid steps. The segment level is the largest level among the
/// step's controller instances, and at least `min_level`.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop<P: Policy + ?Sized>(
    net: &AgentNetwork,
    domain: &Domain,
    dt: f64,
    x0: &[Point],
    steps: usize,
    policy: &mut P,
    min_level: u32,
    record: bool,
) -> Result<ClosedLoopRun, SimulateError> {
    let na = net.len();
    let mut run = ClosedLoopRun {
        dt,
        steps,
        nodes: vec![x0.to_vec()],
        cells: Vec::with_capacity(steps),
        max_k: vec![0.0; na],
        step_max_k: Vec::with_capacity(steps),
        min_margin: vec![f64::INFINITY; na],
        exit: None,
        levels: Vec::with_capacity(steps),
        trace: Vec::new(),
    };
    let mut x = x0.to_vec();
    for m in 0..steps {
        let (modes, cells) = policy.modes(m, &x)?;
        let level = segment_level(&modes, min_level);
        let seg = simulate_segment(net, domain, &modes, &x, m as f64 * dt, dt, level, record)?;
        for i in 0..na {
            run.max_k[i] = run.max_k[i].max(seg.max_k[i]);
            run.min_margin[i] = run.min_margin[i].min(seg.min_margin[i]);
        }
        if run.exit.is_none() {
            run.exit = seg.exit;
        }
        if record {
            let skip = usize::from(m > 0);
            run.trace.extend(seg.trace.into_iter().skip(skip));
        }
        run.step_max_k.push(seg.max_k);
        run.cells.push(cells);
        run.levels.push(level);
        x = seg.end;
        run.nodes.push(x.clone());
    }
    Ok(run)
}

/// Controller instance realizing the class stored for `(config, successor)`.
pub fn instance_for(
    net: &AgentNetwork,
    dec: &CellDecomposition,
    ts: &ControlledTs,
    config: &[CellId],
    successor: CellId,
    x0: &[f64],
) -> Result<Option<ControllerInstance>, SimulateError> {
    let Some(ConfigStatus::Built { level, classes, .. }) = ts.status(config) else {
        if ts.contains(config) {
            return Ok(None);
        }
        return Err(AbstractionError::Unbuilt {
            agent: ts.agent,
            config: config.to_vec(),
        }
        .into());
    };
    let Some(class) = classes.iter().find(|c| c.successor == successor) else {
        return Ok(None);
    };
    Ok(Some(instance_from_class(
        net, dec, ts.agent, config, class, x0, ts.dt, *level,
    )?))
}

#[allow(clippy::too_many_arguments)]
fn instance_from_class(
    net: &AgentNetwork,
    dec: &CellDecomposition,
    agent: AgentId,
    config: &[CellId],
    class: &ActionClass,
    x0: &[f64],
    dt: f64,
    level: u32,
) -> Result<ControllerInstance, SimulateError> {
    Ok(ControllerInstance {
        agent,
        refs: ReferencePoints::from_config(net, dec, agent, config)?,
        x0: x0.to_vec(),
        w: class.w_star.clone(),
        dt,
        level,
    })
}

/// Follows a joint discrete path with the stored representatives.
pub struct PathPolicy<'a> {
    pub net: &'a AgentNetwork,
    pub dec: &'a CellDecomposition,
    pub systems: &'a [&'a ControlledTs],
    pub path: &'a DiscretePath,
}

impl Policy for PathPolicy<'_> {
    fn modes(&mut self, step: usize, x: &[Point]) -> Result<(Vec<AgentMode>, Vec<CellId>), SimulateError> {
        let (here, next) = (&self.path.states[step], &self.path.states[step + 1]);
        let mut modes = Vec::with_capacity(self.net.len());
        for (i, ts) in self.systems.iter().enumerate() {
            let config = abstraction::project_config(self.net, i, here);
            let inst = instance_for(self.net, self.dec, ts, &config, next[i], &x[i])?.ok_or_else(|| {
                SimulateError::NoTransition {
                    step,
                    agent: i,
                    config: config.clone(),
                    successor: next[i],
                }
            })?;
            modes.push(AgentMode::Controlled(inst));
        }
        Ok((modes, here.clone()))
    }
}

fn check_cells(dec: &CellDecomposition, step: usize, cells: &[CellId], x: &[Point]) -> Result<(), SimulateError> {
    for (agent, (&cell, xi)) in cells.iter().zip(x).enumerate() {
        if !dec.in_valid_region(cell, xi, dec.eps_geo()) {
            return Err(SimulateError::ReplayMiss { step, agent, cell });
        }
    }
    Ok(())
}

/// Executes `path` from `x0` and checks `x_i(m δt) ∈ S_{path[m]_i}` at every
/// step.
pub fn replay_path(
    net: &AgentNetwork,
    dec: &CellDecomposition,
    systems: &[&ControlledTs],
    path: &DiscretePath,
    x0: &[Point],
    record: bool,
) -> Result<ClosedLoopRun, SimulateError> {
    if systems.len() != net.len() {
        return Err(SimulateError::Arity {
            expected: net.len(),
            got: systems.len(),
        });
    }
    check_cells(dec, 0, &path.states[0], x0)?;
    let dt = systems.first().map_or(1.0, |s| s.dt);
    let mut policy = PathPolicy {
        net,
        dec,
        systems,
        path,
    };
    let run = run_closed_loop(net, dec.domain(), dt, x0, path.steps(), &mut policy, 0, record)?;
    for (m, x) in run.nodes.iter().enumerate().skip(1) {
        check_cells(dec, m, &path.states[m], x)?;
    }
    Ok(run)
}

/// How a controlled agent picks its successor at each step.
pub type Chooser<'a> = Box<dyn FnMut(usize, AgentId, &[ActionClass]) -> Option<usize> + 'a>;

/// Picks the class with the smallest representative input.
pub fn min_input_chooser<'a>() -> Chooser<'a> {
    Box::new(|_, _, classes| {
        (0..classes.len())
            .min_by(|&a, &b| linalg::norm(&classes[a].w_star).total_cmp(&linalg::norm(&classes[b].w_star)))
    })
}

/// Picks a uniformly random class.
pub fn random_chooser<'a, R: Rng + 'a>(mut rng: R) -> Chooser<'a> {
    Box::new(move |_, _, classes| (!classes.is_empty()).then(|| rng.random_range(0..classes.len())))
}

/// Driver of one agent under [`FeedbackPolicy`].
pub enum Driver<'a> {
    Controlled(&'a mut dyn PostSource),
    Free(PiecewiseInput),
}

/// Online policy: controlled agents build (if needed) their configuration and
/// pick a successor with `chooser`; free agents follow their input. The cell
/// of a controlled agent is the successor chosen at the previous step, the
/// cell of a free agent is located from its state.
pub struct FeedbackPolicy<'a> {
    pub net: &'a AgentNetwork,
    pub dec: &'a CellDecomposition,
    pub drivers: Vec<Driver<'a>>,
    pub chooser: Chooser<'a>,
    planned: Option<Vec<CellId>>,
}

impl<'a> FeedbackPolicy<'a> {
    pub fn new(
        net: &'a AgentNetwork,
        dec: &'a CellDecomposition,
        drivers: Vec<Driver<'a>>,
        chooser: Chooser<'a>,
    ) -> Self {
        FeedbackPolicy {
            net,
            dec,
            drivers,
            chooser,
            planned: None,
        }
    }
}

impl Policy for FeedbackPolicy<'_> {
    fn modes(&mut self, step: usize, x: &[Point]) -> Result<(Vec<AgentMode>, Vec<CellId>), SimulateError> {
        let na = self.net.len();
        if self.drivers.len() != na {
            return Err(SimulateError::Arity {
                expected: na,
                got: self.drivers.len(),
            });
        }
        let mut cells = Vec::with_capacity(na);
        for (i, d) in self.drivers.iter().enumerate() {
            let planned = self.planned.as_ref().map(|p| p[i]);
            cells.push(match (d, planned) {
                (Driver::Controlled(_), Some(c)) => c,
                _ => self.dec.locate(&self.dec.domain().project(&x[i]))?,
            });
        }
        let mut modes = Vec::with_capacity(na);
        let mut next = cells.clone();
        for (i, d) in self.drivers.iter_mut().enumerate() {
            match d {
                Driver::Free(u) => modes.push(AgentMode::Free(u.clone())),
                Driver::Controlled(src) => {
                    let config = abstraction::project_config(self.net, i, &cells);
                    src.prepare(std::slice::from_ref(&config))?;
                    let ts = src.system();
                    let classes = ts.classes(&config)?;
                    let pick = (self.chooser)(step, i, classes).ok_or_else(|| SimulateError::Stuck {
                        step,
                        agent: i,
                        config: config.clone(),
                    })?;
                    let class = &classes[pick];
                    let level = match ts.status(&config) {
                        Some(ConfigStatus::Built { level, .. }) => *level,
                        _ => 0,
                    };
                    next[i] = class.successor;
                    modes.push(AgentMode::Controlled(instance_from_class(
                        self.net, self.dec, i, &config, class, &x[i], ts.dt, level,
                    )?));
                }
            }
        }
        self.planned = Some(next);
        Ok((modes, cells))
    }
}

/// Outcome of one verification trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub x0: Point,
    pub endpoint: Point,
    pub endpoint_error: f64,
    /// `ENDPOINT_TOL · (1 + |χ_i(δt)|)`.
    pub endpoint_tol: f64,
    pub in_successor: bool,
    /// Distance from the endpoint to the successor's valid region.
    pub miss_distance: f64,
    /// Largest `|k|` of the tested agent.
    pub own_max_k: f64,
    /// Largest `|k|` over the tested agent and its neighbors.
    pub max_k: f64,
    /// Largest `|k|` of the tested controller over sampled states of the
    /// inflated cells (`None` when the check is disabled).
    pub property_max_k: Option<f64>,
    /// The modified trajectory stays in `cl(D)` (always true when the check
    /// is disabled).
    pub property_invariant: bool,
    pub exited: bool,
    pub level: u32,
    pub passed: bool,
}

/// Aggregate verdict over the trials of one transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionVerdict {
    pub agent: AgentId,
    pub config: CellConfig,
    pub successor: CellId,
    pub predicted: Point,
    pub trials: Vec<TrialOutcome>,
    pub passed: usize,
    pub worst_endpoint_error: f64,
    pub worst_relative_error: f64,
    pub max_k: f64,
}

impl TransitionVerdict {
    pub fn sound(&self) -> bool {
        self.passed == self.trials.len()
    }
}

fn random_w<R: Rng + ?Sized>(radius: f64, n: usize, rng: &mut R) -> Point {
    loop {
        let p: Point = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if linalg::norm(&p) <= 1.0 {
            return linalg::scale(&p, radius);
        }
    }
}

/// Knobs of a verification trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    /// Added to the segment's substep level (convergence checks).
    pub level_shift: u32,
    /// Reference cells of a neighbor's own neighbors are drawn among cells
    /// whose reference point lies within this distance of the neighbor's
    /// reference point.
    pub neighbor_radius: f64,
    /// Samples of the property check of the tested controller over the
    /// inflated cells (0 disables it).
    pub property_samples: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            level_shift: 0,
            neighbor_radius: f64::INFINITY,
            property_samples: 64,
        }
    }
}

/// Neighbor controller from the feedback family itself: random reference
/// cells for the neighbor's own neighbors (within `radius` of its reference
/// point) and a random `w ∈ W` whose target stays in the domain.
fn neighbor_instance<R: Rng + ?Sized>(
    ctx: &AbstractionContext,
    j: AgentId,
    joint: &mut [Option<CellId>],
    x0: &[f64],
    radius: f64,
    rng: &mut R,
) -> Result<ControllerInstance, SimulateError> {
    let (net, dec) = (ctx.net, ctx.dec);
    let own = joint[j].expect("neighbor cell fixed");
    let mut config: CellConfig = vec![own];
    for &k in net.neighbors(j) {
        let cell = *joint[k].get_or_insert_with(|| {
            let center = dec.reference_point(own);
            loop {
                let l = rng.random_range(0..dec.len());
                if linalg::dist(dec.reference_point(l), center) <= radius {
                    break l;
                }
            }
        });
        config.push(cell);
    }
    let refs = ReferencePoints::from_config(net, dec, j, &config)?;
    let (level, chi_end, _) = controller::reference_level(net, j, &refs, ctx.params.dt, &ctx.integ);
    let mut w = linalg::zeros(net.dim);
    for _ in 0..32 {
        let cand = random_w(ctx.params.w_radius, net.dim, rng);
        if dec
            .domain()
            .contains_closed(&linalg::axpy(&chi_end, ctx.params.dt, &cand), 0.0)
        {
            w = cand;
            break;
        }
    }
    Ok(ControllerInstance {
        agent: j,
        refs,
        x0: x0.to_vec(),
        w,
        dt: ctx.params.dt,
        level,
    })
}

/// One randomized trial of the transition `(config, successor)` of `ts`.
pub fn verify_trial<R: Rng + ?Sized>(
    ctx: &AbstractionContext,
    ts: &ControlledTs,
    config: &[CellId],
    successor: CellId,
    opts: TrialOptions,
    rng: &mut R,
) -> Result<TrialOutcome, SimulateError> {
    let dec = ctx.dec;
    let x0 = dec.sample_in_cell(config[0], rng);
    let neighbors_x: Vec<Point> = config[1..].iter().map(|&l| dec.sample_in_cell(l, rng)).collect();
    run_trial(ctx, ts, config, successor, x0, neighbors_x, opts, rng)
}

#[allow(clippy::too_many_arguments)]
fn run_trial<R: Rng + ?Sized>(
    ctx: &AbstractionContext,
    ts: &ControlledTs,
    config: &[CellId],
    successor: CellId,
    x0: Point,
    neighbors_x: Vec<Point>,
    opts: TrialOptions,
    rng: &mut R,
) -> Result<TrialOutcome, SimulateError> {
    let (net, dec) = (ctx.net, ctx.dec);
    let agent = ts.agent;
    let Some(ConfigStatus::Built { chi_end, .. }) = ts.status(config) else {
        return Err(AbstractionError::Unbuilt {
            agent,
            config: config.to_vec(),
        }
        .into());
    };
    let class = ts
        .class_for(config, successor)?
        .ok_or_else(|| SimulateError::NoTransition {
            step: 0,
            agent,
            config: config.to_vec(),
            successor,
        })?;
    let inst = instance_for(net, dec, ts, config, successor, &x0)?.expect("class exists");
    let property = (opts.property_samples > 0)
        .then(|| controller::check_property_p(&inst, config, net, ctx.params, dec, opts.property_samples, rng));

    let na = net.len();
    let mut joint: Vec<Option<CellId>> = vec![None; na];
    let mut states: Vec<Option<Point>> = vec![None; na];
    joint[agent] = Some(config[0]);
    states[agent] = Some(x0.clone());
    for ((&j, &l), xj) in net.neighbors(agent).iter().zip(&config[1..]).zip(neighbors_x) {
        joint[j] = Some(l);
        states[j] = Some(xj);
    }
    let mut modes = vec![AgentMode::Idle; na];
    modes[agent] = AgentMode::Controlled(inst);
    for &j in net.neighbors(agent) {
        let xj = states[j].clone().expect("set above");
        modes[j] = AgentMode::Controlled(neighbor_instance(ctx, j, &mut joint, &xj, opts.neighbor_radius, rng)?);
    }
    // agents outside the neighborhood stay frozen inside their assigned cells
    let x: Vec<Point> = (0..na)
        .map(|k| match (&states[k], joint[k]) {
            (Some(p), _) => p.clone(),
            (None, Some(l)) => dec.sample_in_cell(l, rng),
            (None, None) => dec.reference_point(config[0]).to_vec(),
        })
        .collect();
    let level = segment_level(&modes, 0) + opts.level_shift;
    let seg = simulate_segment(net, dec.domain(), &modes, &x, 0.0, ts.dt, level, false)?;

    let endpoint = seg.end[agent].clone();
    let endpoint_error = linalg::dist(&endpoint, &class.target);
    let endpoint_tol = ENDPOINT_TOL * (1.0 + linalg::norm(chi_end));
    let in_successor = dec.in_valid_region(successor, &endpoint, dec.eps_geo());
    let miss_distance = dec.valid_region_distance(successor, &endpoint);
    let mut involved = vec![agent];
    involved.extend_from_slice(net.neighbors(agent));
    let max_k = involved.iter().map(|&k| seg.max_k[k]).fold(0.0, f64::max);
    let exited = seg.exit.is_some();
    let property_max_k = property.as_ref().map(|p| p.max_k);
    let property_invariant = property.as_ref().is_none_or(|p| p.p3);
    let passed = endpoint_error <= endpoint_tol
        && in_successor
        && max_k.max(property_max_k.unwrap_or(0.0)) <= ctx.params.v_max + INPUT_TOL
        && property_invariant
        && !exited;
    Ok(TrialOutcome {
        x0,
        endpoint,
        endpoint_error,
        endpoint_tol,
        in_successor,
        miss_distance,
        own_max_k: seg.max_k[agent],
        max_k,
        property_max_k,
        property_invariant,
        exited,
        level,
        passed,
    })
}

/// Runs `trials` randomized trials of one stored transition. Trials draw
/// their randomness from per-trial seeds taken from `rng`, so the verdict is
/// independent of thread scheduling.
pub fn verify_transition<R: Rng + ?Sized>(
    ctx: &AbstractionContext,
    ts: &ControlledTs,
    config: &[CellId],
    successor: CellId,
    trials: usize,
    opts: TrialOptions,
    rng: &mut R,
) -> Result<TransitionVerdict, SimulateError> {
    use rand::SeedableRng;
    let seeds: Vec<u64> = (0..trials).map(|_| rng.random()).collect();
    let outcomes: Vec<TrialOutcome> = seeds
        .par_iter()
        .map(|&s| {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            verify_trial(ctx, ts, config, successor, opts, &mut r)
        })
        .collect::<Result<_, _>>()?;
    let predicted = ts
        .class_for(config, successor)?
        .map(|c| c.target.clone())
        .unwrap_or_default();
    Ok(aggregate(ts.agent, config, successor, predicted, outcomes))
}

fn aggregate(
    agent: AgentId,
    config: &[CellId],
    successor: CellId,
    predicted: Point,
    trials: Vec<TrialOutcome>,
) -> TransitionVerdict {
    TransitionVerdict {
        agent,
        config: config.to_vec(),
        successor,
        predicted,
        passed: trials.iter().filter(|t| t.passed).count(),
        worst_endpoint_error: trials.iter().map(|t| t.endpoint_error).fold(0.0, f64::max),
        worst_relative_error: trials
            .iter()
            .map(|t| t.endpoint_error / t.endpoint_tol * ENDPOINT_TOL)
            .fold(0.0, f64::max),
        max_k: trials.iter().map(|t| t.max_k).fold(0.0, f64::max),
        trials,
    }
}

/// Trial with prescribed initial states (no sampling of positions).
#[allow(clippy::too_many_arguments)]
pub fn verify_from<R: Rng + ?Sized>(
    ctx: &AbstractionContext,
    ts: &ControlledTs,
    config: &[CellId],
    successor: CellId,
    x0: Point,
    neighbors_x: Vec<Point>,
    opts: TrialOptions,
    rng: &mut R,
) -> Result<TrialOutcome, SimulateError> {
    run_trial(ctx, ts, config, successor, x0, neighbors_x, opts, rng)
}
