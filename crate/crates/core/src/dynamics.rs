//! Coupled agent dynamics `ẋ_i = f_i(x_i, x_j) + v_i` built from a small term
//! algebra, plus the four-agent saturated-attraction example.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Domain};
use crate::linalg::{self, Point};

pub type AgentId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("agent {agent}: expected {expected} neighbor states, got {got}")]
    Arity {
        agent: AgentId,
        expected: usize,
        got: usize,
    },
    #[error("agent {0} does not exist")]
    UnknownAgent(AgentId),
    #[error("agent {agent}: {message}")]
    InvalidTerm { agent: AgentId, message: String },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error(
        "agent {agent}: declared {bound} = {declared} violated (observed {observed}) at x_i = {x_i:?}, x_j = {x_j:?}"
    )]
    BoundViolation {
        agent: AgentId,
        bound: &'static str,
        declared: f64,
        observed: f64,
        x_i: Point,
        x_j: Vec<Point>,
    },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("example requires 0 < rho <= R, got rho = {rho}, R = {radius}")]
    InvalidExample { rho: f64, radius: f64 },
}

/// Saturation: `x` when `|x| ≤ ρ`, otherwise `ρ·x/|x|`.
pub fn sat(x: &[f64], rho: f64) -> Point {
    let n = linalg::norm(x);
    if n <= rho {
        x.to_vec()
    } else {
        linalg::scale(x, rho / n)
    }
}

/// Boundary repulsion for a disk of radius `radius` centered at the origin.
pub fn repulsion_g(x: &[f64], radius: f64, rho: f64) -> Point {
    let n = linalg::norm(x);
    let inner = radius - 0.5 * rho;
    if n < inner {
        linalg::zeros(x.len())
    } else if n < radius {
        linalg::scale(x, (inner - n) / n)
    } else {
        linalg::scale(x, -0.5 * rho / n)
    }
}

/// One additive piece of `f_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Term {
    /// `sat_ρ(x_{j_slot} − x_i)`, where `slot` indexes the agent's neighbor list.
    SatAttraction { slot: usize, rho: f64 },
    /// `g(x_i − center)` with the repulsion profile of [`repulsion_g`].
    Repulsion {
        #[serde(default)]
        center: Option<Point>,
        radius: f64,
        rho: f64,
    },
    /// Constant drift.
    Constant { value: Point },
    /// `gain · x_i`.
    Linear { gain: f64 },
}

impl Term {
    fn add_to(&self, x_i: &[f64], x_j: &[&[f64]], out: &mut [f64]) {
        match self {
            Term::SatAttraction { slot, rho } => {
                let rel = linalg::sub(x_j[*slot], x_i);
                linalg::add_assign(out, &sat(&rel, *rho));
            }
            Term::Repulsion { center, radius, rho } => {
                let g = match center {
                    Some(c) => repulsion_g(&linalg::sub(x_i, c), *radius, *rho),
                    None => repulsion_g(x_i, *radius, *rho),
                };
                linalg::add_assign(out, &g);
            }
            Term::Constant { value } => linalg::add_assign(out, value),
            Term::Linear { gain } => {
                for (o, v) in out.iter_mut().zip(x_i) {
                    *o += gain * v;
                }
            }
        }
    }

    /// (sup-norm bound on D, own Lipschitz constant, per-slot Lipschitz constant).
    fn constants(&self, max_norm: f64) -> (f64, f64, Option<(usize, f64)>) {
        match self {
            Term::SatAttraction { slot, rho } => (*rho, 1.0, Some((*slot, 1.0))),
            Term::Repulsion { rho, .. } => (0.5 * rho, 1.0, None),
            Term::Constant { value } => (linalg::norm(value), 0.0, None),
            Term::Linear { gain } => (gain.abs() * max_norm, gain.abs(), None),
        }
    }

    fn validate(&self, dim: usize, n_neighbors: usize) -> Result<(), String> {
        match self {
            Term::SatAttraction { slot, rho } => {
                if *slot >= n_neighbors {
                    return Err(format!(
                        "sat_attraction slot {slot} out of range for {n_neighbors} neighbors"
                    ));
                }
                if !(*rho > 0.0) {
                    return Err(format!("sat_attraction rho must be positive, got {rho}"));
                }
            }
            Term::Repulsion { center, radius, rho } => {
                if !(*rho > 0.0) || rho > radius {
                    return Err(format!(
                        "repulsion requires 0 < rho <= radius, got rho = {rho}, radius = {radius}"
                    ));
                }
                if center.as_ref().is_some_and(|c| c.len() != dim) {
                    return Err("repulsion center has wrong dimension".into());
                }
            }
            Term::Constant { value } => {
                if value.len() != dim {
                    return Err("constant value has wrong dimension".into());
                }
            }
            Term::Linear { .. } => {}
        }
        Ok(())
    }
}

/// Per-agent neighbor list and vector field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub neighbors: Vec<AgentId>,
    pub terms: Vec<Term>,
}

/// Declared global constants of the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Sup of `|f_i|` over the domain.
    #[serde(rename = "M")]
    pub m: f64,
    /// Lipschitz constant in the neighbor argument.
    #[serde(rename = "L1")]
    pub l1: f64,
    /// Lipschitz constant in the own argument.
    #[serde(rename = "L2")]
    pub l2: f64,
    pub v_max: f64,
}

impl Bounds {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let Bounds { m, l1, l2, v_max } = *self;
        if !(v_max > 0.0) || !(m > v_max) {
            return Err(DynamicsError::InvalidBounds(format!(
                "need 0 < v_max < M, got v_max = {v_max}, M = {m}"
            )));
        }
        if !(l1 >= 0.0) || !(l2 >= 0.0) || !(l1 + l2 > 0.0) {
            return Err(DynamicsError::InvalidBounds(format!(
                "Lipschitz constants must be nonnegative and not both zero, got L1 = {l1}, L2 = {l2}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNetwork {
    pub dim: usize,
    pub agents: Vec<AgentSpec>,
    pub bounds: Bounds,
}

impl AgentNetwork {
    pub fn new(dim: usize, agents: Vec<AgentSpec>, bounds: Bounds) -> Result<Self, DynamicsError> {
        let net = AgentNetwork { dim, agents, bounds };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        self.bounds.validate()?;
        let n_agents = self.agents.len();
        for (i, a) in self.agents.iter().enumerate() {
            for &j in &a.neighbors {
                if j >= n_agents || j == i {
                    return Err(DynamicsError::InvalidTerm {
                        agent: i,
                        message: format!("invalid neighbor {j}"),
                    });
                }
            }
            for t in &a.terms {
                t.validate(self.dim, a.neighbors.len())
                    .map_err(|message| DynamicsError::InvalidTerm { agent: i, message })?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn neighbors(&self, i: AgentId) -> &[AgentId] {
        &self.agents[i].neighbors
    }

    pub fn max_sqrt_neighbors(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| (a.neighbors.len() as f64).sqrt())
            .fold(0.0, f64::max)
    }

    /// `f_i(x_i, x_j)`; the free input is not included.
    pub fn eval_f(&self, i: AgentId, x_i: &[f64], x_j: &[&[f64]]) -> Result<Point, DynamicsError> {
        let agent = self.agents.get(i).ok_or(DynamicsError::UnknownAgent(i))?;
        if x_j.len() != agent.neighbors.len() {
            return Err(DynamicsError::Arity {
                agent: i,
                expected: agent.neighbors.len(),
                got: x_j.len(),
            });
        }
        Ok(self.eval_f_unchecked(i, x_i, x_j))
    }

    /// [`eval_f`](Self::eval_f) without the arity check.
    pub fn eval_f_unchecked(&self, i: AgentId, x_i: &[f64], x_j: &[&[f64]]) -> Point {
        let mut out = linalg::zeros(self.dim);
        for t in &self.agents[i].terms {
            t.add_to(x_i, x_j, &mut out);
        }
        out
    }

    /// `f_i` evaluated with neighbor states read from the full joint state.
    pub fn eval_f_joint(&self, i: AgentId, x: &[Point]) -> Point {
        let x_j: Vec<&[f64]> = self.agents[i].neighbors.iter().map(|&j| x[j].as_slice()).collect();
        self.eval_f_unchecked(i, &x[i], &x_j)
    }

    /// Bounds implied by the term algebra on `domain` (with `v_max` carried
    /// over from the declared bounds).
    pub fn derived_bounds(&self, domain: &Domain) -> Bounds {
        let (lo, hi) = domain.bounding_box();
        let max_norm = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut m = 0.0_f64;
        let mut l1 = 0.0_f64;
        let mut l2 = 0.0_f64;
        for a in &self.agents {
            let mut mi = 0.0;
            let mut l2i = 0.0;
            let mut slots = vec![0.0; a.neighbors.len()];
            for t in &a.terms {
                let (b, own, slot) = t.constants(max_norm);
                mi += b;
                l2i += own;
                if let Some((s, c)) = slot {
                    slots[s] += c;
                    // sat(x_j - x_i) also depends on x_i, already counted in `own`
                }
            }
            m = m.max(mi);
            l2 = l2.max(l2i);
            l1 = l1.max(slots.iter().map(|c| c * c).sum::<f64>().sqrt());
        }
        Bounds {
            m,
            l1,
            l2,
            v_max: self.bounds.v_max,
        }
    }
}

/// Worst sampled ratios from [`audit_bounds`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: usize,
    pub max_f: f64,
    pub max_l1_ratio: f64,
    pub max_l2_ratio: f64,
}

const AUDIT_TOL: f64 = 1e-9;

/// Monte-Carlo falsification of the declared `M`, `L1`, `L2` on `domain`.
///
/// Half of the Lipschitz pairs are nearby perturbations, which catches local
/// steepness that far-apart pairs average out.
pub fn audit_bounds<R: Rng + ?Sized>(
    net: &AgentNetwork,
    domain: &Domain,
    samples: usize,
    rng: &mut R,
) -> Result<AuditReport, DynamicsError> {
    let samples = samples.max(1);
    let mut report = AuditReport {
        samples,
        ..Default::default()
    };
    let scale = 1e-3 * domain.diameter();
    for s in 0..samples {
        let i = s % net.len();
        let k = net.neighbors(i).len();
        let x_i = geometry::sample_in_domain(domain, rng);
        let x_j: Vec<Point> = (0..k).map(|_| geometry::sample_in_domain(domain, rng)).collect();
        let near = s % 2 == 0;
        let perturb = |p: &Point, rng: &mut R| -> Point {
            if near {
                let q: Point = p
                    .iter()
                    .map(|v| v + scale * (2.0 * rng.random::<f64>() - 1.0))
                    .collect();
                if domain.contains_closed(&q, 0.0) {
                    q
                } else {
                    domain.project(&q)
                }
            } else {
                geometry::sample_in_domain(domain, rng)
            }
        };
        let y_i = perturb(&x_i, rng);
        let y_j: Vec<Point> = x_j.iter().map(|p| perturb(p, rng)).collect();

        let f = net.eval_f_unchecked(i, &x_i, &linalg::as_refs(&x_j));
        let fn_ = linalg::norm(&f);
        report.max_f = report.max_f.max(fn_);
        if fn_ > net.bounds.m * (1.0 + AUDIT_TOL) + AUDIT_TOL {
            return Err(DynamicsError::BoundViolation {
                agent: i,
                bound: "M",
                declared: net.bounds.m,
                observed: fn_,
                x_i,
                x_j,
            });
        }

        let dx = linalg::dist(&x_i, &y_i);
        if dx > 0.0 {
            let f2 = net.eval_f_unchecked(i, &y_i, &linalg::as_refs(&x_j));
            let ratio = linalg::dist(&f, &f2) / dx;
            report.max_l2_ratio = report.max_l2_ratio.max(ratio);
            if ratio > net.bounds.l2 * (1.0 + AUDIT_TOL) + AUDIT_TOL {
                return Err(DynamicsError::BoundViolation {
                    agent: i,
                    bound: "L2",
                    declared: net.bounds.l2,
                    observed: ratio,
                    x_i,
                    x_j: vec![y_i],
                });
            }
        }
        if k > 0 {
            let dj = x_j
                .iter()
                .zip(&y_j)
                .map(|(a, b)| linalg::dist(a, b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dj > 0.0 {
                let f2 = net.eval_f_unchecked(i, &x_i, &linalg::as_refs(&y_j));
                let ratio = linalg::dist(&f, &f2) / dj;
                report.max_l1_ratio = report.max_l1_ratio.max(ratio);
                if ratio > net.bounds.l1 * (1.0 + AUDIT_TOL) + AUDIT_TOL {
                    return Err(DynamicsError::BoundViolation {
                        agent: i,
                        bound: "L1",
                        declared: net.bounds.l1,
                        observed: ratio,
                        x_i,
                        x_j,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Name of the built-in four-agent preset.
pub const EXAMPLE_PRESET: &str = "four-agent-example";
/// Alternative name accepted for the preset.
pub const EXAMPLE_PRESET_ALIAS: &str = "paper-example-4agents";

/// Four planar agents on a disk of radius `R`: agent 1 drifts under its own
/// input, agents 0 and 2 follow agent 1 and agent 3 follows agent 2, each
/// through `sat_ρ` attraction, with boundary repulsion for everyone.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSystem {
    pub rho: f64,
    pub radius: f64,
    pub network: AgentNetwork,
    pub domain: Domain,
}

impl ExampleSystem {
    pub fn new(rho: f64, radius: f64) -> Result<Self, DynamicsError> {
        if !(rho > 0.0) || rho > radius {
            return Err(DynamicsError::InvalidExample { rho, radius });
        }
        let g = Term::Repulsion {
            center: None,
            radius,
            rho,
        };
        let follow = |leader: AgentId| AgentSpec {
            neighbors: vec![leader],
            terms: vec![Term::SatAttraction { slot: 0, rho }, g.clone()],
        };
        let agents = vec![
            follow(1),
            AgentSpec {
                neighbors: vec![],
                terms: vec![g.clone()],
            },
            follow(1),
            follow(2),
        ];
        let bounds = Bounds {
            m: 1.5 * rho,
            l1: 1.0,
            l2: 2.0,
            v_max: 0.5 * rho,
        };
        let network = AgentNetwork::new(2, agents, bounds)?;
        let domain = Domain::Disk {
            center: vec![0.0, 0.0],
            radius,
        };
        Ok(ExampleSystem {
            rho,
            radius,
            network,
            domain,
        })
    }

    /// Looks up a preset by name.
    pub fn preset(name: &str, rho: f64, radius: f64) -> Result<Self, DynamicsError> {
        if name == EXAMPLE_PRESET || name == EXAMPLE_PRESET_ALIAS {
            Self::new(rho, radius)
        } else {
            Err(DynamicsError::UnknownPreset(name.to_string()))
        }
    }

    /// Default initial positions for `ρ = R = 10`.
    pub fn initial_states() -> Vec<Point> {
        vec![vec![5.0, -3.0], vec![5.0, 3.0], vec![0.0, 6.0], vec![-4.0, 6.0]]
    }

    /// The decoupled agent.
    pub const DRIFTER: AgentId = 1;

    /// Constant input of the decoupled agent in the fixed-input workflow.
    pub fn drifter_input() -> Point {
        vec![-3.0, -3.0]
    }

    /// Direction of the switching input family of the decoupled agent.
    pub fn drifter_direction() -> Point {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        vec![s, -s]
    }

    /// Pairs whose distance stays below `ρ` along closed-loop runs.
    pub fn connected_pairs() -> [(AgentId, AgentId); 2] {
        [(0, 1), (1, 2)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sat_examples() {
        assert_eq!(sat(&[1.0, 2.0], 10.0), vec![1.0, 2.0]);
        let s = sat(&[30.0, 40.0], 10.0);
        assert_relative_eq!(s[0], 6.0, epsilon = 1e-15);
        assert_relative_eq!(s[1], 8.0, epsilon = 1e-15);
        assert_eq!(sat(&[0.0, 0.0], 10.0), vec![0.0, 0.0]);
    }

    #[test]
    fn repulsion_examples() {
        assert_eq!(repulsion_g(&[0.0, 0.0], 10.0, 10.0), vec![0.0, 0.0]);
        assert_eq!(repulsion_g(&[6.0, 0.0], 10.0, 10.0), vec![-1.0, 0.0]);
        assert_eq!(repulsion_g(&[12.0, 0.0], 10.0, 10.0), vec![-5.0, 0.0]);
    }

    #[test]
    fn example_eval_f() {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        let net = &ex.network;
        assert_eq!(net.eval_f(1, &[0.0, 0.0], &[]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(net.eval_f(0, &[0.0, 0.0], &[&[1.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(net.eval_f(3, &[6.0, 0.0], &[&[6.0, 0.0]]).unwrap(), vec![-1.0, 0.0]);
        assert!(matches!(
            net.eval_f(0, &[0.0, 0.0], &[]),
            Err(DynamicsError::Arity { .. })
        ));
    }

    #[test]
    fn example_derived_bounds_match_declared() {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        let d = ex.network.derived_bounds(&ex.domain);
        assert_eq!(d, ex.network.bounds);
    }

    #[test]
    fn audit_example_passes() {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = audit_bounds(&ex.network, &ex.domain, 10_000, &mut rng).unwrap();
        assert!(rep.max_f <= 15.0 + 1e-9);
        assert!(rep.max_l1_ratio <= 1.0 + 1e-9);
        assert!(rep.max_l2_ratio <= 2.0 + 1e-9);
    }

    #[test]
    fn audit_zero_dynamics() {
        let net = AgentNetwork::new(
            2,
            vec![AgentSpec {
                neighbors: vec![],
                terms: vec![],
            }],
            Bounds {
                m: 1.0,
                l1: 0.0,
                l2: 1.0,
                v_max: 0.5,
            },
        )
        .unwrap();
        let dom = Domain::disk(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rep = audit_bounds(&net, &dom, 100, &mut rng).unwrap();
        assert_eq!(rep.max_f, 0.0);
    }

    #[test]
    fn audit_catches_steep_linear_field() {
        let net = AgentNetwork::new(
            2,
            vec![AgentSpec {
                neighbors: vec![],
                terms: vec![Term::Linear { gain: 2.0 }],
            }],
            Bounds {
                m: 100.0,
                l1: 0.0,
                l2: 1.0,
                v_max: 0.5,
            },
        )
        .unwrap();
        let dom = Domain::disk(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        match audit_bounds(&net, &dom, 100, &mut rng) {
            Err(DynamicsError::BoundViolation { bound, observed, .. }) => {
                assert_eq!(bound, "L2");
                assert_relative_eq!(observed, 2.0, epsilon = 1e-9);
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn repulsion_is_monotone_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100_000 {
            let x: Point = (0..2).map(|_| 30.0 * rng.random::<f64>() - 15.0).collect();
            let y: Point = (0..2).map(|_| 30.0 * rng.random::<f64>() - 15.0).collect();
            let gx = repulsion_g(&x, 10.0, 10.0);
            let gy = repulsion_g(&y, 10.0, 10.0);
            let ip = linalg::dot(&linalg::sub(&x, &y), &linalg::sub(&gx, &gy));
            assert!(ip <= 1e-12, "inner product {ip}");
        }
    }

    #[test]
    fn preset_lookup() {
        assert!(ExampleSystem::preset(EXAMPLE_PRESET, 10.0, 10.0).is_ok());
        assert!(ExampleSystem::preset(EXAMPLE_PRESET_ALIAS, 10.0, 10.0).is_ok());
        assert!(ExampleSystem::preset("nope", 10.0, 10.0).is_err());
    }

    #[test]
    fn network_json_roundtrip() {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        let s = serde_json::to_string(&ex.network).unwrap();
        assert!(s.contains("\"M\""));
        let back: AgentNetwork = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ex.network);
    }

    proptest! {
        #[test]
        fn sat_is_bounded_and_nonexpansive(
            a in prop::array::uniform2(-100.0f64..100.0),
            b in prop::array::uniform2(-100.0f64..100.0),
            rho in 0.1f64..50.0,
        ) {
            let sa = sat(&a, rho);
            let sb = sat(&b, rho);
            prop_assert!(linalg::norm(&sa) <= linalg::norm(&a).min(rho) * (1.0 + 1e-12));
            prop_assert!(linalg::dist(&sa, &sb) <= linalg::dist(&a, &b) * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn example_f_bounded(
            xs in prop::collection::vec(prop::array::uniform2(-7.0f64..7.0), 4),
        ) {
            let ex = ExampleSystem::new(10.0, 10.0).unwrap();
            let x: Vec<Point> = xs.iter().map(|p| p.to_vec()).collect();
            for i in 0..4 {
                let f = ex.network.eval_f_joint(i, &x);
                prop_assert!(linalg::norm(&f) <= 15.0 + 1e-12);
            }
        }
    }
}
