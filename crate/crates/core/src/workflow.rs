//! End-to-end pipelines on the four-agent example: parameter selection, the
//! fixed-input (Case I) and switching-input (Case II) reachability
//! workflows, closed-loop runs and randomized transition campaigns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractionContext, AbstractionError, CellConfig, ControlledTs};
use crate::discretization::{self, DiscretizationError, DiscretizationParams, PlanningConstants};
use crate::dynamics::{AgentId, DynamicsError, ExampleSystem};
use crate::geometry::{self, CellDecomposition, CellId, GeometryError, Square};
use crate::integrator::Integrator;
use crate::linalg::{self, Point};
use crate::reachability::{self, Envelope, InputFamily, OnDemand, PiecewiseInput, ReachError, ReachSet};
use crate::simulate::{self, Chooser, ClosedLoopRun, Driver, FeedbackPolicy, SimulateError, TrialOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error("expected {expected} initial states, got {got}")]
    InitialStates { expected: usize, got: usize },
    #[error("initial distance {distance} between agents {a} and {b} exceeds rho = {rho}")]
    Disconnected {
        a: AgentId,
        b: AgentId,
        distance: f64,
        rho: f64,
    },
    #[error("could not sample a buildable configuration in {0} attempts")]
    Sampling(usize),
}

/// Discretization of the example for one `λ`: `δt̄(λ)` snapped to the
/// horizon, the largest grid admissible at that step, and the parameters.
#[derive(Clone, Debug)]
pub struct ExampleSetup {
    pub system: ExampleSystem,
    pub lambda: f64,
    pub horizon: f64,
    pub dt_bar: f64,
    pub dt: f64,
    pub nt: usize,
    /// Bound on `d_max` at the snapped step.
    pub d_max_bound: f64,
    pub dec: CellDecomposition,
    pub constants: PlanningConstants,
    pub params: DiscretizationParams,
    pub integ: Integrator,
}

impl ExampleSetup {
    pub fn new(lambda: f64, rho: f64, radius: f64, horizon: f64) -> Result<Self, WorkflowError> {
        let system = ExampleSystem::new(rho, radius)?;
        let (dt_bar, _) = discretization::example_dt_dmax(lambda, rho)?;
        let (dt, nt) = discretization::snap_dt(dt_bar, horizon)?;
        let d_max_bound = discretization::example_dmax_for_dt(lambda, rho, dt);
        let side = geometry::fit_side(&system.domain, d_max_bound)?;
        let dec = CellDecomposition::build_grid(system.domain.clone(), side)?;
        let constants = PlanningConstants::from_network(&system.network)?;
        let params = DiscretizationParams::example_mode(lambda, rho, &constants, dec.d_max(), dt)?;
        Ok(ExampleSetup {
            system,
            lambda,
            horizon,
            dt_bar,
            dt,
            nt,
            d_max_bound,
            dec,
            constants,
            params,
            integ: Integrator::default(),
        })
    }

    /// Same grid and constants with a different step and no admissibility
    /// certificate (for negative controls).
    pub fn with_unchecked_dt(&self, dt: f64) -> Self {
        let mut s = self.clone();
        s.dt = dt;
        s.nt = (self.horizon / dt).ceil() as usize;
        s.params = DiscretizationParams::unchecked(self.lambda, 0.0, &self.constants, self.dec.d_max(), dt);
        s
    }

    pub fn context(&self) -> AbstractionContext<'_> {
        AbstractionContext::new(&self.system.network, &self.params, &self.dec).with_integrator(self.integ)
    }

    /// Checks the initial states: one per agent, inside the domain, and the
    /// connected pairs within `ρ`.
    pub fn check_initial(&self, x0: &[Point]) -> Result<Vec<CellId>, WorkflowError> {
        let n = self.system.network.len();
        if x0.len() != n {
            return Err(WorkflowError::InitialStates {
                expected: n,
                got: x0.len(),
            });
        }
        for (a, b) in ExampleSystem::connected_pairs() {
            let distance = linalg::dist(&x0[a], &x0[b]);
            if distance > self.system.rho {
                return Err(WorkflowError::Disconnected {
                    a,
                    b,
                    distance,
                    rho: self.system.rho,
                });
            }
        }
        x0.iter().map(|p| self.dec.locate(p).map_err(Into::into)).collect()
    }
}

/// Axis-aligned target region of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub agent: AgentId,
    pub lo: Point,
    pub hi: Point,
}

/// Cells whose square meets the box `[lo, hi]`.
pub fn cells_in_box(dec: &CellDecomposition, lo: &[f64], hi: &[f64]) -> Vec<CellId> {
    let b = Square::new(lo.to_vec(), hi.to_vec());
    dec.cells()
        .iter()
        .filter(|c| {
            let s = c.square();
            s.lo.iter()
                .zip(&s.hi)
                .zip(b.lo.iter().zip(&b.hi))
                .all(|((a0, a1), (b0, b1))| a0 <= b1 && b0 <= a1)
        })
        .map(|c| c.id)
        .collect()
}

/// Illustrative Case I target boxes; the example does not fix any.
pub fn illustrative_targets() -> Vec<TargetBox> {
    vec![
        TargetBox {
            agent: 0,
            lo: vec![0.5, -2.5],
            hi: vec![1.5, -1.5],
        },
        TargetBox {
            agent: 2,
            lo: vec![-0.5, -1.0],
            hi: vec![0.5, 0.0],
        },
    ]
}

/// Result of the fixed-input workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseOne {
    /// Cells of the decoupled agent at `κ δt`.
    pub drifter_cells: Vec<CellId>,
    pub drifter_states: Vec<Point>,
    /// Forward reach per agent (`None` for the decoupled agent).
    pub forward: Vec<Option<ReachSet>>,
    /// Backward reach from the target box, restricted to the forward sets.
    pub backward: Vec<Option<ReachSet>>,
    pub targets: Vec<TargetBox>,
    pub built: Vec<usize>,
}

fn reach_sets_of(r: &ReachSet) -> Vec<Vec<Vec<CellId>>> {
    r.steps.iter().map(|s| vec![s.clone()]).collect()
}

/// Fixed-input workflow: the decoupled agent follows `input`; agents 0 and 2
/// reach forward along its cell trace (and backward from their target
/// boxes); agent 3 reaches forward over every cell agent 2 may occupy.
pub fn case_one(
    setup: &ExampleSetup,
    x0: &[Point],
    input: &PiecewiseInput,
    targets: &[TargetBox],
    open_w: bool,
) -> Result<CaseOne, WorkflowError> {
    let cells0 = setup.check_initial(x0)?;
    let net = &setup.system.network;
    let dec = &setup.dec;
    let drifter = ExampleSystem::DRIFTER;
    let states = reachability::free_trajectory(net, drifter, &x0[drifter], input, setup.dt, setup.nt, 256);
    let drifter_cells: Vec<CellId> = states
        .iter()
        .map(|p| dec.locate(&dec.domain().project(p)))
        .collect::<Result<_, _>>()?;
    let trace: Vec<Vec<CellId>> = drifter_cells[..setup.nt].iter().map(|&c| vec![c]).collect();

    let ctx = setup.context().with_open_w(open_w);
    let mut forward = vec![None; net.len()];
    let mut backward = vec![None; net.len()];
    let mut built = vec![0; net.len()];
    for agent in [0usize, 2] {
        let mut src = OnDemand::new(ctx, agent);
        let f = reachability::forward_reach(&mut src, &[cells0[agent]], &trace)?;
        if let Some(t) = targets.iter().find(|t| t.agent == agent) {
            let goal = cells_in_box(dec, &t.lo, &t.hi);
            backward[agent] = Some(reachability::backward_reach(&mut src, &goal, &trace, Some(&f))?);
        }
        forward[agent] = Some(f);
        built[agent] = src.ts.len();
    }
    let leader = backward[2].as_ref().or(forward[2].as_ref()).expect("agent 2 computed");
    let mut src = OnDemand::new(ctx, 3);
    let sets = reach_sets_of(leader);
    forward[3] = Some(reachability::union_reach(&mut src, &[cells0[3]], &sets[..setup.nt])?);
    built[3] = src.ts.len();
    Ok(CaseOne {
        drifter_cells,
        drifter_states: states,
        forward,
        backward,
        targets: targets.to_vec(),
        built,
    })
}

/// Result of the switching-input workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTwo {
    pub envelope: Envelope,
    /// Robust reach per agent (`None` for the decoupled agent or agents not
    /// requested).
    pub reach: Vec<Option<ReachSet>>,
    pub built: Vec<usize>,
}

/// Switching-input workflow: robust reach of agents 0 and 2 against the
/// dilated envelope of the decoupled agent, and of agent 3 against the reach
/// sets of agent 2. `agents` selects which followers to compute.
pub fn case_two<R: Rng + ?Sized>(
    setup: &ExampleSetup,
    x0: &[Point],
    family: &InputFamily,
    agents: &[AgentId],
    open_w: bool,
    rng: &mut R,
) -> Result<CaseTwo, WorkflowError> {
    let cells0 = setup.check_initial(x0)?;
    let net = &setup.system.network;
    let drifter = ExampleSystem::DRIFTER;
    let ctx = setup.context().with_open_w(open_w);
    let envelope = reachability::neighbor_envelope(
        net,
        &setup.dec,
        drifter,
        &x0[drifter],
        family,
        setup.dt,
        setup.nt,
        &ctx.integ,
        rng,
    )?;
    let env_sets: Vec<Vec<Vec<CellId>>> = envelope.dilated[..setup.nt].iter().map(|s| vec![s.clone()]).collect();
    let mut reach = vec![None; net.len()];
    let mut built = vec![0; net.len()];
    let mut order: Vec<AgentId> = agents.iter().copied().filter(|&a| a != drifter).collect();
    if order.contains(&3) && !order.contains(&2) {
        order.push(2);
    }
    order.sort_unstable();
    order.dedup();
    for agent in order {
        let mut src = OnDemand::new(ctx, agent);
        let sets = if agent == 3 {
            reach_sets_of(reach[2].as_ref().expect("agent 2 first"))[..setup.nt].to_vec()
        } else {
            env_sets.clone()
        };
        reach[agent] = Some(reachability::robust_reach(&mut src, &[cells0[agent]], &sets)?);
        built[agent] = src.ts.len();
    }
    Ok(CaseTwo { envelope, reach, built })
}

/// Closed loop over `nt` steps: agents with a `free` input follow it, all
/// others use the hybrid feedback with successors picked by `chooser`
/// (configurations are built on demand).
pub fn closed_loop(
    ctx: AbstractionContext<'_>,
    nt: usize,
    x0: &[Point],
    free: &[Option<PiecewiseInput>],
    chooser: Chooser<'_>,
    record: bool,
) -> Result<ClosedLoopRun, WorkflowError> {
    let net = ctx.net;
    let mut sources: Vec<Option<OnDemand>> = free
        .iter()
        .enumerate()
        .map(|(i, f)| f.is_none().then(|| OnDemand::new(ctx, i)))
        .collect();
    let drivers: Vec<Driver> = sources
        .iter_mut()
        .zip(free)
        .map(|(s, f)| match (s, f) {
            (Some(src), _) => Driver::Controlled(src),
            (None, Some(u)) => Driver::Free(u.clone()),
            (None, None) => unreachable!("every agent has a source or an input"),
        })
        .collect();
    let mut policy = FeedbackPolicy::new(net, ctx.dec, drivers, chooser);
    Ok(simulate::run_closed_loop(
        net,
        ctx.dec.domain(),
        ctx.params.dt,
        x0,
        nt,
        &mut policy,
        ctx.integ.min_level,
        record,
    )?)
}

/// Closed loop of the example over the horizon with the decoupled agent
/// following `input`.
pub fn example_closed_loop(
    setup: &ExampleSetup,
    x0: &[Point],
    input: &PiecewiseInput,
    chooser: Chooser<'_>,
    record: bool,
) -> Result<ClosedLoopRun, WorkflowError> {
    setup.check_initial(x0)?;
    let mut free = vec![None; setup.system.network.len()];
    free[ExampleSystem::DRIFTER] = Some(input.clone());
    closed_loop(setup.context(), setup.nt, x0, &free, chooser, record)
}

/// One randomized transition trial in a campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignTrial {
    pub agent: AgentId,
    pub config: CellConfig,
    pub successor: CellId,
    pub seed: u64,
    pub passed: bool,
    pub endpoint: Point,
    pub endpoint_error: f64,
    pub endpoint_tol: f64,
    pub in_successor: bool,
    pub own_max_k: f64,
    pub max_k: f64,
    pub property_max_k: Option<f64>,
    /// `|x(δt) at level+1 − x(δt) at level| / max(|x(δt)|, 1)`.
    pub refinement_change: Option<f64>,
}

/// Aggregate of a randomized campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub configs: usize,
    pub trials: Vec<CampaignTrial>,
    pub passed: usize,
    /// Largest `|k|` along the simulated trajectories.
    pub max_k: f64,
    /// Largest `|k|` found by the property checks.
    pub property_max_k: f64,
    pub worst_endpoint_ratio: f64,
    pub worst_refinement_change: f64,
    pub flagged_skipped: usize,
}

impl Campaign {
    pub fn failures(&self) -> usize {
        self.trials.len() - self.passed
    }
}

fn sample_config<R: Rng + ?Sized>(
    ctx: &AbstractionContext,
    agent: AgentId,
    neighbor_radius: f64,
    rng: &mut R,
) -> Result<(CellConfig, ControlledTs, usize), WorkflowError> {
    let dec = ctx.dec;
    let mut skipped = 0;
    for _ in 0..1000 {
        let own = dec.locate(&dec.sample_in_domain(rng))?;
        let mut config = vec![own];
        for _ in ctx.net.neighbors(agent) {
            let p = loop {
                let q = dec.sample_in_domain(rng);
                if linalg::dist(&q, dec.reference_point(own)) <= neighbor_radius {
                    break q;
                }
            };
            config.push(dec.locate(&p)?);
        }
        let status = ctx.build_config(agent, &config)?;
        if status.is_flagged() {
            skipped += 1;
            continue;
        }
        let mut ts = ControlledTs::empty(agent, ctx.params, ctx.open_w);
        ts.insert(config.clone(), status);
        return Ok((config, ts, skipped));
    }
    Err(WorkflowError::Sampling(1000))
}

/// Samples `configs` random buildable configurations of the coupled agents
/// (neighbors within `neighbor_radius`), picks a random successor for each
/// and runs `trials_per` verification trials, each with `property_samples`
/// samples of the property check. With `refine`, every trial is
/// repeated one substep level higher and the endpoint change recorded.
pub fn transition_campaign(
    ctx: &AbstractionContext,
    configs: usize,
    trials_per: usize,
    neighbor_radius: f64,
    property_samples: usize,
    refine: bool,
    seed: u64,
) -> Result<Campaign, WorkflowError> {
    let coupled: Vec<AgentId> = (0..ctx.net.len())
        .filter(|&i| !ctx.net.neighbors(i).is_empty())
        .collect();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..configs).map(|_| master.random()).collect();
    let per: Vec<(Vec<CampaignTrial>, usize)> = seeds
        .par_iter()
        .map(|&s| -> Result<_, WorkflowError> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let agent = coupled[rng.random_range(0..coupled.len())];
            let (config, ts, skipped) = sample_config(ctx, agent, neighbor_radius, &mut rng)?;
            let post = ts.post(&config)?;
            let successor = post[rng.random_range(0..post.len())];
            let mut out = Vec::with_capacity(trials_per);
            for _ in 0..trials_per {
                let ts_seed: u64 = rng.random();
                let o = simulate::verify_trial(
                    ctx,
                    &ts,
                    &config,
                    successor,
                    TrialOptions {
                        level_shift: 0,
                        neighbor_radius,
                        property_samples,
                    },
                    &mut ChaCha8Rng::seed_from_u64(ts_seed),
                )?;
                let refinement_change = if refine {
                    let o2 = simulate::verify_trial(
                        ctx,
                        &ts,
                        &config,
                        successor,
                        TrialOptions {
                            level_shift: 1,
                            neighbor_radius,
                            property_samples: 0,
                        },
                        &mut ChaCha8Rng::seed_from_u64(ts_seed),
                    )?;
                    Some(linalg::dist(&o2.endpoint, &o.endpoint) / linalg::norm(&o.endpoint).max(1.0))
                } else {
                    None
                };
                out.push(CampaignTrial {
                    agent,
                    config: config.clone(),
                    successor,
                    seed: ts_seed,
                    passed: o.passed,
                    endpoint: o.endpoint,
                    endpoint_error: o.endpoint_error,
                    endpoint_tol: o.endpoint_tol,
                    in_successor: o.in_successor,
                    own_max_k: o.own_max_k,
                    max_k: o.max_k,
                    property_max_k: o.property_max_k,
                    refinement_change,
                });
            }
            Ok((out, skipped))
        })
        .collect::<Result<_, _>>()?;
    let flagged_skipped = per.iter().map(|(_, s)| s).sum();
    let trials: Vec<CampaignTrial> = per.into_iter().flat_map(|(t, _)| t).collect();
    Ok(Campaign {
        configs,
        passed: trials.iter().filter(|t| t.passed).count(),
        max_k: trials.iter().map(|t| t.max_k).fold(0.0, f64::max),
        property_max_k: trials.iter().filter_map(|t| t.property_max_k).fold(0.0, f64::max),
        worst_endpoint_ratio: trials
            .iter()
            .map(|t| t.endpoint_error / t.endpoint_tol)
            .fold(0.0, f64::max),
        worst_refinement_change: trials.iter().filter_map(|t| t.refinement_change).fold(0.0, f64::max),
        flagged_skipped,
        trials,
    })
}
