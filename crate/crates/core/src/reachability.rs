//! Discrete reachability over controlled transition systems: forward,
//! backward and robust (adversarial neighbor) reach sets, neighbor envelopes
//! of a decoupled agent, and breadth-first joint path search.

use std::collections::{BTreeSet, HashMap, VecDeque};

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{self, AbstractionContext, AbstractionError, CellConfig, ControlledTs};
use crate::dynamics::{AgentId, AgentNetwork};
use crate::geometry::{CellDecomposition, CellId, GeometryError};
use crate::integrator::{self, Integrator};
use crate::linalg::{self, Point};

/// Default node budget of [`extract_path`].
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReachError {
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("trace has {got} steps, expected {expected}")]
    TraceLength { expected: usize, got: usize },
    #[error("agent {0} has neighbors; envelopes need a decoupled agent")]
    CoupledAgent(AgentId),
    #[error("search exceeded the node budget of {0}")]
    BudgetExceeded(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Source of successor sets for one agent.
pub trait PostSource: Sync {
    fn agent(&self) -> AgentId;
    /// Makes `post` answerable for `configs` (or fails naming the first
    /// configuration that cannot be provided).
    fn prepare(&mut self, configs: &[CellConfig]) -> Result<(), AbstractionError>;
    fn post(&self, config: &[CellId]) -> Result<Vec<CellId>, AbstractionError>;
    /// Cells `l` for which `(l, neighbors…)` can be queried.
    fn candidates(&self, neighbors: &[CellId]) -> Vec<CellId>;
    /// The transition system built so far.
    fn system(&self) -> &ControlledTs;
}

impl PostSource for ControlledTs {
    fn agent(&self) -> AgentId {
        self.agent
    }

    fn prepare(&mut self, configs: &[CellConfig]) -> Result<(), AbstractionError> {
        match configs.iter().find(|c| !self.contains(c)) {
            Some(c) => Err(AbstractionError::Unbuilt {
                agent: self.agent,
                config: c.clone(),
            }),
            None => Ok(()),
        }
    }

    fn post(&self, config: &[CellId]) -> Result<Vec<CellId>, AbstractionError> {
        ControlledTs::post(self, config)
    }

    fn candidates(&self, neighbors: &[CellId]) -> Vec<CellId> {
        self.configs()
            .filter(|(c, _)| &c[1..] == neighbors)
            .map(|(c, _)| c[0])
            .collect()
    }

    fn system(&self) -> &ControlledTs {
        self
    }
}

/// Transition system that builds missing configurations when asked.
pub struct OnDemand<'a> {
    pub ctx: AbstractionContext<'a>,
    pub ts: ControlledTs,
}

impl<'a> OnDemand<'a> {
    pub fn new(ctx: AbstractionContext<'a>, agent: AgentId) -> Self {
        let ts = ControlledTs::empty(agent, ctx.params, ctx.open_w);
        OnDemand { ctx, ts }
    }
}

impl PostSource for OnDemand<'_> {
    fn agent(&self) -> AgentId {
        self.ts.agent
    }

    fn prepare(&mut self, configs: &[CellConfig]) -> Result<(), AbstractionError> {
        self.ctx.extend(&mut self.ts, configs).map(|_| ())
    }

    fn post(&self, config: &[CellId]) -> Result<Vec<CellId>, AbstractionError> {
        self.ts.post(config)
    }

    fn candidates(&self, _neighbors: &[CellId]) -> Vec<CellId> {
        (0..self.ctx.dec.len()).collect()
    }

    fn system(&self) -> &ControlledTs {
        &self.ts
    }
}

/// Per-step reachable cell sets `Q^0 … Q^NT`, each sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachSet {
    pub steps: Vec<Vec<CellId>>,
}

impl ReachSet {
    pub fn last(&self) -> &[CellId] {
        self.steps.last().map_or(&[], |s| s.as_slice())
    }

    pub fn union(&self) -> Vec<CellId> {
        let mut all: Vec<CellId> = self.steps.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

fn sorted(set: impl IntoIterator<Item = CellId>) -> Vec<CellId> {
    set.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

fn config_of(cell: CellId, neighbors: &[CellId]) -> CellConfig {
    std::iter::once(cell).chain(neighbors.iter().copied()).collect()
}

/// `Q^κ = ∪_{l ∈ Q^{κ−1}} Post(l; (l, trace[κ−1]))`.
pub fn forward_reach<S: PostSource + ?Sized>(
    src: &mut S,
    q0: &[CellId],
    neighbor_trace: &[Vec<CellId>],
) -> Result<ReachSet, ReachError> {
    let mut steps = vec![sorted(q0.iter().copied())];
    for tail in neighbor_trace {
        let prev = steps.last().expect("nonempty");
        let configs: Vec<CellConfig> = prev.iter().map(|&l| config_of(l, tail)).collect();
        src.prepare(&configs)?;
        let mut next = BTreeSet::new();
        for c in &configs {
            next.extend(src.post(c)?);
        }
        steps.push(next.into_iter().collect());
    }
    Ok(ReachSet { steps })
}

/// Backward sets `B^0 … B^NT` with `B^NT = targets` and
/// `B^{κ−1} = {l : Post(l; (l, trace[κ−1])) ∩ B^κ ≠ ∅}`, optionally
/// intersected with a forward reach set.
pub fn backward_reach<S: PostSource + ?Sized>(
    src: &mut S,
    targets: &[CellId],
    neighbor_trace: &[Vec<CellId>],
    forward: Option<&ReachSet>,
) -> Result<ReachSet, ReachError> {
    let nt = neighbor_trace.len();
    if let Some(f) = forward {
        if f.steps.len() != nt + 1 {
            return Err(ReachError::TraceLength {
                expected: nt + 1,
                got: f.steps.len(),
            });
        }
    }
    let restrict = |k: usize, set: Vec<CellId>| -> Vec<CellId> {
        match forward {
            Some(f) => set
                .into_iter()
                .filter(|l| f.steps[k].binary_search(l).is_ok())
                .collect(),
            None => set,
        }
    };
    let mut rev = vec![restrict(nt, sorted(targets.iter().copied()))];
    for k in (0..nt).rev() {
        let tail = &neighbor_trace[k];
        let cands = match forward {
            Some(f) => f.steps[k].clone(),
            None => sorted(src.candidates(tail)),
        };
        let configs: Vec<CellConfig> = cands.iter().map(|&l| config_of(l, tail)).collect();
        src.prepare(&configs)?;
        let after = rev.last().expect("nonempty");
        let mut prev = Vec::new();
        for (l, c) in cands.iter().zip(&configs) {
            if src.post(c)?.iter().any(|s| after.binary_search(s).is_ok()) {
                prev.push(*l);
            }
        }
        rev.push(prev);
    }
    rev.reverse();
    Ok(ReachSet { steps: rev })
}

/// `Q^κ = ∪_{l ∈ Q^{κ−1}} ∩_{ℓ_j ∈ N^{κ−1}} Post(l; (l, ℓ_j))`, where
/// `neighbor_sets[κ][m]` lists the possible cells of the `m`-th neighbor.
pub fn robust_reach<S: PostSource + ?Sized>(
    src: &mut S,
    q0: &[CellId],
    neighbor_sets: &[Vec<Vec<CellId>>],
) -> Result<ReachSet, ReachError> {
    let mut steps = vec![sorted(q0.iter().copied())];
    for slots in neighbor_sets {
        let tails: Vec<Vec<CellId>> = if slots.is_empty() {
            vec![vec![]]
        } else {
            slots
                .iter()
                .map(|s| s.iter().copied())
                .multi_cartesian_product()
                .collect()
        };
        let prev = steps.last().expect("nonempty").clone();
        let configs: Vec<CellConfig> = prev
            .iter()
            .flat_map(|&l| tails.iter().map(move |t| config_of(l, t)))
            .collect();
        src.prepare(&configs)?;
        let src_ref: &S = src;
        let parts: Vec<Vec<CellId>> = prev
            .par_iter()
            .map(|&l| -> Result<Vec<CellId>, AbstractionError> {
                let mut acc: Option<Vec<CellId>> = None;
                for t in &tails {
                    let p = src_ref.post(&config_of(l, t))?;
                    acc = Some(match acc {
                        None => p,
                        Some(a) => a.into_iter().filter(|x| p.binary_search(x).is_ok()).collect(),
                    });
                    if acc.as_ref().is_some_and(|a| a.is_empty()) {
                        break;
                    }
                }
                Ok(acc.unwrap_or_default())
            })
            .collect::<Result<_, _>>()?;
        steps.push(sorted(parts.into_iter().flatten()));
    }
    Ok(ReachSet { steps })
}

/// `Q^κ = ∪_{l ∈ Q^{κ−1}} ∪_{ℓ_j ∈ N^{κ−1}} Post(l; (l, ℓ_j))`: the cells
/// reachable when the neighbors may take any of the listed cells.
pub fn union_reach<S: PostSource + ?Sized>(
    src: &mut S,
    q0: &[CellId],
    neighbor_sets: &[Vec<Vec<CellId>>],
) -> Result<ReachSet, ReachError> {
    let mut steps = vec![sorted(q0.iter().copied())];
    for slots in neighbor_sets {
        let tails: Vec<Vec<CellId>> = if slots.is_empty() {
            vec![vec![]]
        } else {
            slots
                .iter()
                .map(|s| s.iter().copied())
                .multi_cartesian_product()
                .collect()
        };
        let prev = steps.last().expect("nonempty");
        let configs: Vec<CellConfig> = prev
            .iter()
            .flat_map(|&l| tails.iter().map(move |t| config_of(l, t)))
            .collect();
        src.prepare(&configs)?;
        let mut next = BTreeSet::new();
        for c in &configs {
            next.extend(src.post(c)?);
        }
        steps.push(next.into_iter().collect());
    }
    Ok(ReachSet { steps })
}

/// Free-input family of a decoupled agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputFamily {
    /// One constant input.
    Constant { value: Point },
    /// `base + γ(t)·direction` with `γ(t) ∈ [−1, 1]` piecewise constant on
    /// `[0, active_until]` and zero afterwards.
    Switching {
        base: Point,
        direction: Point,
        active_until: f64,
        /// Constant γ levels sampled uniformly in [−1, 1].
        levels: usize,
        /// Switch times for the single-switch patterns ±1 → ∓1.
        switch_points: usize,
        /// Random piecewise-constant γ with `pieces` equal pieces.
        random_samples: usize,
        pieces: usize,
    },
}

impl InputFamily {
    /// Case II family of the four-agent example.
    pub fn example_switching() -> Self {
        InputFamily::Switching {
            base: crate::dynamics::ExampleSystem::drifter_input(),
            direction: crate::dynamics::ExampleSystem::drifter_direction(),
            active_until: 0.9,
            levels: 21,
            switch_points: 17,
            random_samples: 200,
            pieces: 9,
        }
    }
}

/// A piecewise-constant input signal: `values[k]` holds on
/// `[breaks[k], breaks[k+1])`, the last value afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseInput {
    pub breaks: Vec<f64>,
    pub values: Vec<Point>,
}

impl PiecewiseInput {
    pub fn constant(value: Point) -> Self {
        PiecewiseInput {
            breaks: vec![0.0],
            values: vec![value],
        }
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let k = self.breaks.partition_point(|&b| b <= t).max(1) - 1;
        &self.values[k]
    }
}

fn switching_signal(base: &[f64], dir: &[f64], times: &[f64], gammas: &[f64], until: f64) -> PiecewiseInput {
    let mut breaks = times.to_vec();
    let mut values: Vec<Point> = gammas.iter().map(|g| linalg::axpy(base, *g, dir)).collect();
    breaks.push(until);
    values.push(base.to_vec());
    PiecewiseInput { breaks, values }
}

/// Signals sampled from `family`, deterministic apart from the random ones.
pub fn sample_signals<R: Rng + ?Sized>(family: &InputFamily, rng: &mut R) -> Vec<PiecewiseInput> {
    match family {
        InputFamily::Constant { value } => vec![PiecewiseInput::constant(value.clone())],
        InputFamily::Switching {
            base,
            direction,
            active_until,
            levels,
            switch_points,
            random_samples,
            pieces,
        } => {
            let mut out = Vec::new();
            let lv = (*levels).max(2);
            for k in 0..lv {
                let g = -1.0 + 2.0 * k as f64 / (lv - 1) as f64;
                out.push(switching_signal(base, direction, &[0.0], &[g], *active_until));
            }
            for k in 1..=*switch_points {
                let s = active_until * k as f64 / (*switch_points + 1) as f64;
                for (a, b) in [(-1.0, 1.0), (1.0, -1.0)] {
                    out.push(switching_signal(base, direction, &[0.0, s], &[a, b], *active_until));
                }
            }
            let p = (*pieces).max(1);
            let times: Vec<f64> = (0..p).map(|k| active_until * k as f64 / p as f64).collect();
            for _ in 0..*random_samples {
                let gammas: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..=1.0)).collect();
                out.push(switching_signal(base, direction, &times, &gammas, *active_until));
            }
            out
        }
    }
}

/// States of a decoupled agent `ẋ = f_i(x) + v(t)` at `κ·δt`, `κ = 0…nt`.
/// Integration restarts at every input switch.
pub fn free_trajectory(
    net: &AgentNetwork,
    agent: AgentId,
    x0: &[f64],
    input: &PiecewiseInput,
    dt: f64,
    nt: usize,
    substeps: usize,
) -> Vec<Point> {
    let mut samples = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    let mut t = 0.0;
    for k in 1..=nt {
        let t_next = k as f64 * dt;
        let mut cuts: Vec<f64> = input.breaks.iter().copied().filter(|&b| b > t && b < t_next).collect();
        cuts.push(t_next);
        for c in cuts {
            let u = input.at(t).to_vec();
            let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
                let f = net.eval_f_unchecked(agent, y, &[]);
                for ((d, a), b) in dy.iter_mut().zip(&f).zip(&u) {
                    *d = a + b;
                }
            };
            let n = ((c - t) / dt * substeps as f64).ceil().max(1.0) as usize;
            x = integrator::run_fixed(&rhs, t, &x, c - t, n, |_, _| {});
            t = c;
        }
        samples.push(x.clone());
    }
    samples
}

/// Cells a decoupled agent may occupy at each sampling instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Cells hit by the sampled inputs.
    pub raw: Vec<Vec<CellId>>,
    /// `raw` grown by one layer of adjacent cells.
    pub dilated: Vec<Vec<CellId>>,
    pub trajectories: usize,
}

/// Over-approximates the per-step cells of a decoupled agent under `family`.
#[allow(clippy::too_many_arguments)]
pub fn neighbor_envelope<R: Rng + ?Sized>(
    net: &AgentNetwork,
    dec: &CellDecomposition,
    agent: AgentId,
    x0: &[f64],
    family: &InputFamily,
    dt: f64,
    nt: usize,
    integ: &Integrator,
    rng: &mut R,
) -> Result<Envelope, ReachError> {
    if !net.neighbors(agent).is_empty() {
        return Err(ReachError::CoupledAgent(agent));
    }
    let signals = sample_signals(family, rng);
    let substeps = 1usize << integ.min_level.max(6);
    let paths: Vec<Vec<Point>> = signals
        .par_iter()
        .map(|s| free_trajectory(net, agent, x0, s, dt, nt, substeps))
        .collect();
    let mut raw = vec![BTreeSet::new(); nt + 1];
    for p in &paths {
        for (k, x) in p.iter().enumerate() {
            raw[k].insert(dec.locate(&dec.domain().project(x))?);
        }
    }
    let raw: Vec<Vec<CellId>> = raw.into_iter().map(|s| s.into_iter().collect()).collect();
    let dilated = raw
        .iter()
        .map(|s| sorted(s.iter().flat_map(|&l| std::iter::once(l).chain(dec.adjacent(l)))))
        .collect();
    Ok(Envelope {
        raw,
        dilated,
        trajectories: paths.len(),
    })
}

/// Joint discrete plan `ℓ^0 ℓ^1 …`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub states: Vec<Vec<CellId>>,
}

impl DiscretePath {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Breadth-first search over the product system for a shortest path of at
/// most `nt` steps from `start` to a state satisfying `goal`.
pub fn extract_path<S: PostSource>(
    net: &AgentNetwork,
    systems: &mut [S],
    start: &[CellId],
    goal: impl Fn(&[CellId]) -> bool,
    nt: usize,
    budget: usize,
) -> Result<Option<DiscretePath>, ReachError> {
    if systems.len() != net.len() {
        return Err(AbstractionError::SystemCount {
            expected: net.len(),
            got: systems.len(),
        }
        .into());
    }
    let start = start.to_vec();
    let mut parent: HashMap<Vec<CellId>, Option<Vec<CellId>>> = HashMap::new();
    parent.insert(start.clone(), None);
    let rebuild = |parent: &HashMap<Vec<CellId>, Option<Vec<CellId>>>, end: Vec<CellId>| {
        let mut states = vec![end];
        while let Some(Some(p)) = parent.get(states.last().expect("nonempty")) {
            states.push(p.clone());
        }
        states.reverse();
        DiscretePath { states }
    };
    if goal(&start) {
        return Ok(Some(DiscretePath { states: vec![start] }));
    }
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((state, depth)) = queue.pop_front() {
        if depth == nt {
            continue;
        }
        let mut posts = Vec::with_capacity(systems.len());
        for (i, s) in systems.iter_mut().enumerate() {
            let cfg = abstraction::project_config(net, i, &state);
            s.prepare(std::slice::from_ref(&cfg))?;
            posts.push(s.post(&cfg)?);
        }
        for next in posts.into_iter().multi_cartesian_product() {
            if parent.contains_key(&next) {
                continue;
            }
            if parent.len() >= budget {
                return Err(ReachError::BudgetExceeded(budget));
            }
            parent.insert(next.clone(), Some(state.clone()));
            if goal(&next) {
                return Ok(Some(rebuild(&parent, next)));
            }
            queue.push_back((next, depth + 1));
        }
    }
    Ok(None)
}

/// Checks that consecutive path states are related by the product system.
pub fn path_is_consistent(
    net: &AgentNetwork,
    systems: &[&ControlledTs],
    path: &DiscretePath,
) -> Result<bool, AbstractionError> {
    for w in path.states.windows(2) {
        let found = abstraction::product_step(net, systems, &w[0])?.any(|s| s == w[1]);
        if !found {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AgentSpec, Bounds, ExampleSystem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> ControlledTs {
        // a=0 -> b=1 -> c=2, c unbuilt
        ControlledTs::from_transitions(0, 2, [(vec![0], vec![1]), (vec![1], vec![2])])
    }

    fn free_net(n: usize) -> AgentNetwork {
        AgentNetwork::new(
            2,
            (0..n)
                .map(|_| AgentSpec {
                    neighbors: vec![],
                    terms: vec![],
                })
                .collect(),
            Bounds {
                m: 1.0,
                l1: 0.0,
                l2: 1.0,
                v_max: 0.5,
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_steps() {
        let mut ts = chain();
        let r = forward_reach(&mut ts, &[0], &[]).unwrap();
        assert_eq!(r.steps, vec![vec![0]]);
    }

    #[test]
    fn forward_and_backward_chain() {
        let mut ts = chain();
        let f = forward_reach(&mut ts, &[0], &[vec![], vec![]]).unwrap();
        assert_eq!(f.steps, vec![vec![0], vec![1], vec![2]]);
        let b = backward_reach(&mut ts, &[2], &[vec![], vec![]], None).unwrap();
        assert_eq!(b.steps, vec![vec![0], vec![1], vec![2]]);
        let b = backward_reach(&mut ts, &[7], &[vec![], vec![]], Some(&f)).unwrap();
        assert!(b.steps[0].is_empty());
        assert!(forward_reach(&mut ts, &[0], &[vec![], vec![], vec![]]).is_err());
    }

    #[test]
    fn backward_from_everything() {
        let mut ts = ControlledTs::from_transitions(0, 2, [(vec![0], vec![0, 1]), (vec![1], vec![1])]);
        let b = backward_reach(&mut ts, &[0, 1], &[vec![]], None).unwrap();
        assert_eq!(b.steps[0], vec![0, 1]);
    }

    #[test]
    fn robust_intersects_over_neighbors() {
        let mut ts = ControlledTs::from_transitions(
            0,
            2,
            [(vec![0, 5], vec![1, 2]), (vec![0, 6], vec![2, 3]), (vec![1, 5], vec![])],
        );
        let single = robust_reach(&mut ts, &[0], &[vec![vec![5]]]).unwrap();
        let fwd = forward_reach(&mut ts, &[0], &[vec![5]]).unwrap();
        assert_eq!(single, fwd);
        let both = robust_reach(&mut ts, &[0], &[vec![vec![5, 6]]]).unwrap();
        assert_eq!(both.steps[1], vec![2]);
        let empty = robust_reach(&mut ts, &[1], &[vec![vec![5]]]).unwrap();
        assert!(empty.steps[1].is_empty());
        let any = union_reach(&mut ts, &[0], &[vec![vec![5, 6]]]).unwrap();
        assert_eq!(any.steps[1], vec![1, 2, 3]);
    }

    #[test]
    fn bfs_paths() {
        let net = free_net(2);
        let mut systems = vec![
            ControlledTs::from_transitions(0, 2, [(vec![0], vec![0, 1]), (vec![1], vec![1])]),
            ControlledTs::from_transitions(1, 2, [(vec![5], vec![6]), (vec![6], vec![7]), (vec![7], vec![7])]),
        ];
        let p = extract_path(&net, &mut systems, &[0, 5], |s| s == [0, 5], 3, 100)
            .unwrap()
            .unwrap();
        assert_eq!(p.steps(), 0);
        let p = extract_path(&net, &mut systems, &[0, 5], |s| s == [1, 7], 3, 100)
            .unwrap()
            .unwrap();
        assert_eq!(p.steps(), 2);
        let refs: Vec<&ControlledTs> = systems.iter().collect();
        assert!(path_is_consistent(&net, &refs, &p).unwrap());
        assert!(extract_path(&net, &mut systems, &[0, 5], |s| s == [2, 7], 3, 100)
            .unwrap()
            .is_none());
        assert!(matches!(
            extract_path(&net, &mut systems, &[0, 5], |s| s == [2, 7], 3, 2),
            Err(ReachError::BudgetExceeded(2))
        ));
    }

    #[test]
    fn envelopes() {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        let dec = CellDecomposition::build_grid(ex.domain.clone(), 20.0 / 40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let integ = Integrator::default();
        let x0 = ExampleSystem::initial_states()[1].clone();
        let dt = 0.1;
        let constant = InputFamily::Constant {
            value: ExampleSystem::drifter_input(),
        };
        let e = neighbor_envelope(&ex.network, &dec, 1, &x0, &constant, dt, 20, &integ, &mut rng).unwrap();
        assert!(e.raw.iter().all(|s| s.len() == 1));
        let path = free_trajectory(
            &ex.network,
            1,
            &x0,
            &PiecewiseInput::constant(ExampleSystem::drifter_input()),
            dt,
            20,
            64,
        );
        for (k, x) in path.iter().enumerate() {
            assert_eq!(e.raw[k], vec![dec.locate(x).unwrap()]);
        }

        let family = InputFamily::example_switching();
        let env = neighbor_envelope(&ex.network, &dec, 1, &x0, &family, dt, 20, &integ, &mut rng).unwrap();
        for (k, l) in e.raw.iter().enumerate() {
            // γ ≡ 0 is among the constant levels
            assert!(env.raw[k].contains(&l[0]));
        }
        // Monte-Carlo containment for fresh random inputs
        let fresh = InputFamily::Switching {
            base: ExampleSystem::drifter_input(),
            direction: ExampleSystem::drifter_direction(),
            active_until: 0.9,
            levels: 0,
            switch_points: 0,
            random_samples: 300,
            pieces: 9,
        };
        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        for s in sample_signals(&fresh, &mut rng2).iter().skip(2) {
            let p = free_trajectory(&ex.network, 1, &x0, s, dt, 20, 64);
            for (k, x) in p.iter().enumerate() {
                assert!(env.dilated[k].contains(&dec.locate(x).unwrap()));
            }
        }
        assert!(matches!(
            neighbor_envelope(&ex.network, &dec, 0, &x0, &family, dt, 20, &integ, &mut rng),
            Err(ReachError::CoupledAgent(0))
        ));
    }

    #[test]
    fn piecewise_lookup() {
        let s = switching_signal(&[0.0], &[1.0], &[0.0, 0.5], &[-1.0, 1.0], 0.9);
        assert_eq!(s.at(0.0), &[-1.0]);
        assert_eq!(s.at(0.7), &[1.0]);
        assert_eq!(s.at(1.5), &[0.0]);
    }
}
