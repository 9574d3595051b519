//! Individual and product controlled transition systems.
//!
//! For agent `i` and a cell configuration `ℓ_i = (l_i, l_{j1}, …)`, the
//! successors are exactly the cells meeting `B(χ(δt); r)`, and each successor
//! `l'` carries one action class `{(x − χ(δt))/δt : x ∈ S_{l'} ∩ B}`,
//! represented here by a canonical `w*`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{self, ControllerError, ReferencePoints};
use crate::discretization::DiscretizationParams;
use crate::dynamics::{AgentId, AgentNetwork};
use crate::geometry::{self, Ball, CellDecomposition, CellId, ConvexRegion, Square};
use crate::integrator::Integrator;
use crate::linalg::{self, Point};

/// `(l_i, l_{j1}, …, l_{jN_i})`.
pub type CellConfig = Vec<CellId>;

/// Exhaustive enumeration refuses more configurations than this.
pub const MAX_EXHAUSTIVE_CONFIGS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error("agent {agent}: configuration {config:?} has not been built")]
    Unbuilt { agent: AgentId, config: CellConfig },
    #[error("agent {agent}: configuration {config:?} does not start at cell {cell}")]
    StateMismatch {
        agent: AgentId,
        cell: CellId,
        config: CellConfig,
    },
    #[error("agent {agent}: configuration {config:?} should have {expected} cells")]
    Arity {
        agent: AgentId,
        config: CellConfig,
        expected: usize,
    },
    #[error("exhaustive enumeration would visit {0} configurations")]
    TooManyConfigs(usize),
    #[error("cell id {0} out of range")]
    UnknownCell(CellId),
    #[error("expected one transition system per agent ({expected}), got {got}")]
    SystemCount { expected: usize, got: usize },
    #[error("malformed DOT line {line}: {text:?}")]
    DotParse { line: usize, text: String },
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// One action class `[w]` for the pair (configuration, successor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionClass {
    pub successor: CellId,
    /// Canonical representative; `χ(δt) + δt·w*` is `target`.
    pub w_star: Point,
    pub target: Point,
    /// Distance from `χ(δt)` to the successor's valid region.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConfigStatus {
    Built {
        chi_end: Point,
        level: u32,
        err_estimate: f64,
        classes: Vec<ActionClass>,
    },
    /// Excluded from the abstraction, e.g. because the reachable ball leaves
    /// the domain.
    Flagged { reason: String },
}

impl ConfigStatus {
    pub fn classes(&self) -> &[ActionClass] {
        match self {
            ConfigStatus::Built { classes, .. } => classes,
            ConfigStatus::Flagged { .. } => &[],
        }
    }

    pub fn is_flagged(&self) -> bool {
        matches!(self, ConfigStatus::Flagged { .. })
    }
}

/// Controlled individual transition system of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlledTs {
    pub agent: AgentId,
    pub open_w: bool,
    pub dt: f64,
    pub r: f64,
    configs: BTreeMap<CellConfig, ConfigStatus>,
}

impl ControlledTs {
    pub fn empty(agent: AgentId, params: &DiscretizationParams, open_w: bool) -> Self {
        ControlledTs {
            agent,
            open_w,
            dt: params.dt,
            r: params.r,
            configs: BTreeMap::new(),
        }
    }

    /// Hand-built system; every listed configuration gets classes with zero
    /// representatives.
    pub fn from_transitions(
        agent: AgentId,
        dim: usize,
        entries: impl IntoIterator<Item = (CellConfig, Vec<CellId>)>,
    ) -> Self {
        let configs = entries
            .into_iter()
            .map(|(config, succ)| {
                let classes = succ
                    .into_iter()
                    .map(|s| ActionClass {
                        successor: s,
                        w_star: linalg::zeros(dim),
                        target: linalg::zeros(dim),
                        gap: 0.0,
                    })
                    .collect();
                (
                    config,
                    ConfigStatus::Built {
                        chi_end: linalg::zeros(dim),
                        level: 0,
                        err_estimate: 0.0,
                        classes,
                    },
                )
            })
            .collect();
        ControlledTs {
            agent,
            open_w: false,
            dt: 1.0,
            r: 0.0,
            configs,
        }
    }

    pub fn configs(&self) -> impl Iterator<Item = (&CellConfig, &ConfigStatus)> {
        self.configs.iter()
    }

    pub fn status(&self, config: &[CellId]) -> Option<&ConfigStatus> {
        self.configs.get(config)
    }

    pub fn contains(&self, config: &[CellId]) -> bool {
        self.configs.contains_key(config)
    }

    pub fn insert(&mut self, config: CellConfig, status: ConfigStatus) {
        self.configs.insert(config, status);
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Action classes of a configuration; error if it was never built.
    pub fn classes(&self, config: &[CellId]) -> Result<&[ActionClass], AbstractionError> {
        self.configs
            .get(config)
            .map(|s| s.classes())
            .ok_or_else(|| AbstractionError::Unbuilt {
                agent: self.agent,
                config: config.to_vec(),
            })
    }

    /// `Post(l_i; ℓ_i)`, sorted. Empty only for flagged configurations.
    pub fn post(&self, config: &[CellId]) -> Result<Vec<CellId>, AbstractionError> {
        Ok(self.classes(config)?.iter().map(|c| c.successor).collect())
    }

    /// `Post(l_i; ℓ_i)` with the state given separately.
    pub fn post_from(&self, cell: CellId, config: &[CellId]) -> Result<Vec<CellId>, AbstractionError> {
        if config.first() != Some(&cell) {
            return Err(AbstractionError::StateMismatch {
                agent: self.agent,
                cell,
                config: config.to_vec(),
            });
        }
        self.post(config)
    }

    /// Action class leading to `successor`, if any.
    pub fn class_for(&self, config: &[CellId], successor: CellId) -> Result<Option<&ActionClass>, AbstractionError> {
        Ok(self.classes(config)?.iter().find(|c| c.successor == successor))
    }

    pub fn built_count(&self) -> usize {
        self.configs.values().filter(|s| !s.is_flagged()).count()
    }

    pub fn flagged_count(&self) -> usize {
        self.configs.values().filter(|s| s.is_flagged()).count()
    }

    /// Number of transitions `(l_i, (ℓ_i, [w]), l_i')`.
    pub fn edge_count(&self) -> usize {
        self.configs.values().map(|s| s.classes().len()).sum()
    }

    /// States that appear as a source or successor.
    pub fn states(&self) -> Vec<CellId> {
        let mut s: Vec<CellId> = self
            .configs
            .iter()
            .flat_map(|(c, st)| std::iter::once(c[0]).chain(st.classes().iter().map(|a| a.successor)))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let configs: Vec<serde_json::Value> = self
            .configs
            .iter()
            .map(|(c, s)| {
                let mut v = serde_json::to_value(s).expect("status serializes");
                v["config"] = serde_json::json!(c);
                v
            })
            .collect();
        serde_json::json!({
            "agent": self.agent,
            "open_w": self.open_w,
            "dt": self.dt,
            "r": self.r,
            "configs": configs,
        })
    }

    /// Edge list with columns `l_i, l_j…, l_i_next, w_0…`.
    pub fn to_csv(&self) -> String {
        let width = self.configs.keys().next().map_or(1, |c| c.len());
        let dim = self
            .configs
            .values()
            .flat_map(|s| s.classes())
            .next()
            .map_or(0, |c| c.w_star.len());
        let mut out = String::from("l_i");
        for k in 1..width {
            let _ = write!(out, ",l_j{k}");
        }
        out.push_str(",l_i_next");
        for k in 0..dim {
            let _ = write!(out, ",w_{k}");
        }
        out.push('\n');
        for (c, s) in &self.configs {
            for class in s.classes() {
                out.push_str(&c.iter().map(|x| x.to_string()).join(","));
                let _ = write!(out, ",{}", class.successor);
                for w in &class.w_star {
                    let _ = write!(out, ",{w:.16e}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Graphviz digraph; each edge is labelled with its configuration.
    pub fn to_dot(&self) -> String {
        let mut out = format!("digraph agent{} {{\n", self.agent);
        for (c, s) in &self.configs {
            let label = c.iter().map(|x| x.to_string()).join(",");
            for class in s.classes() {
                let _ = writeln!(out, "  {} -> {} [label=\"{}\"];", c[0], class.successor, label);
            }
        }
        out.push_str("}\n");
        out
    }

    /// Edge set `(l_i, ℓ_i, l_i')` in deterministic order.
    pub fn edges(&self) -> Vec<(CellId, CellConfig, CellId)> {
        self.configs
            .iter()
            .flat_map(|(c, s)| s.classes().iter().map(move |a| (c[0], c.clone(), a.successor)))
            .collect()
    }
}

/// Parses the edge set back out of [`ControlledTs::to_dot`] output.
pub fn parse_dot(text: &str) -> Result<Vec<(CellId, CellConfig, CellId)>, AbstractionError> {
    let mut edges = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if !line.contains("->") {
            continue;
        }
        let bad = || AbstractionError::DotParse {
            line: line_no + 1,
            text: line.to_string(),
        };
        let (lhs, rest) = line.split_once("->").ok_or_else(bad)?;
        let (rhs, attrs) = rest.split_once('[').ok_or_else(bad)?;
        let label = attrs
            .split_once("label=\"")
            .and_then(|(_, l)| l.split_once('"'))
            .map(|(l, _)| l)
            .ok_or_else(bad)?;
        let src: CellId = lhs.trim().parse().map_err(|_| bad())?;
        let dst: CellId = rhs.trim().parse().map_err(|_| bad())?;
        let config = label
            .split(',')
            .map(|x| x.trim().parse::<CellId>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        edges.push((src, config, dst));
    }
    Ok(edges)
}

/// Which configurations to build.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigEnumerator {
    /// Every tuple in `I^{N_i+1}`; refused above [`MAX_EXHAUSTIVE_CONFIGS`].
    Exhaustive,
    Explicit(Vec<CellConfig>),
    /// Cartesian product of per-slot cell sets (slot 0 is the agent itself).
    Product(Vec<Vec<CellId>>),
}

impl ConfigEnumerator {
    pub fn configs(&self, n_cells: usize, width: usize) -> Result<Vec<CellConfig>, AbstractionError> {
        match self {
            ConfigEnumerator::Exhaustive => {
                let count = n_cells
                    .checked_pow(width as u32)
                    .filter(|c| *c <= MAX_EXHAUSTIVE_CONFIGS)
                    .ok_or(AbstractionError::TooManyConfigs(n_cells.saturating_pow(width as u32)))?;
                let mut out = Vec::with_capacity(count);
                out.extend((0..width).map(|_| 0..n_cells).multi_cartesian_product());
                if width == 0 {
                    out.clear();
                }
                Ok(out)
            }
            ConfigEnumerator::Explicit(v) => Ok(v.clone()),
            ConfigEnumerator::Product(slots) => {
                let count: usize = slots.iter().map(|s| s.len()).product();
                if count > MAX_EXHAUSTIVE_CONFIGS {
                    return Err(AbstractionError::TooManyConfigs(count));
                }
                Ok(slots
                    .iter()
                    .map(|s| s.iter().copied())
                    .multi_cartesian_product()
                    .collect())
            }
        }
    }
}

/// Cells whose square lies within `distance` of any square in `seeds`.
pub fn cells_within(dec: &CellDecomposition, seeds: &[CellId], distance: f64) -> Vec<CellId> {
    let mut out: Vec<CellId> = seeds
        .iter()
        .flat_map(|&s| {
            let sq = dec.cell(s).square();
            let c = sq.center();
            let reach = distance + 0.5 * linalg::dist(&sq.lo, &sq.hi);
            dec.cells_meeting_ball(&c, reach, false)
                .into_iter()
                .filter(move |&l| square_gap(&sq, &dec.cell(l).square()) <= distance)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn square_gap(a: &Square, b: &Square) -> f64 {
    a.lo.iter()
        .zip(&a.hi)
        .zip(b.lo.iter().zip(&b.hi))
        .map(|((alo, ahi), (blo, bhi))| {
            let d = (blo - ahi).max(alo - bhi).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `pr_i(ℓ)`: the entries of a joint cell assignment for agent `i` and its
/// neighbors.
pub fn project_config(net: &AgentNetwork, agent: AgentId, joint: &[CellId]) -> CellConfig {
    std::iter::once(joint[agent])
        .chain(net.neighbors(agent).iter().map(|&j| joint[j]))
        .collect()
}

/// Everything needed to build transition systems.
#[derive(Clone, Copy, Debug)]
pub struct AbstractionContext<'a> {
    pub net: &'a AgentNetwork,
    pub params: &'a DiscretizationParams,
    pub dec: &'a CellDecomposition,
    pub integ: Integrator,
    pub open_w: bool,
}

impl<'a> AbstractionContext<'a> {
    pub fn new(net: &'a AgentNetwork, params: &'a DiscretizationParams, dec: &'a CellDecomposition) -> Self {
        AbstractionContext {
            net,
            params,
            dec,
            integ: Integrator::default(),
            open_w: false,
        }
    }

    pub fn with_open_w(mut self, open_w: bool) -> Self {
        self.open_w = open_w;
        self
    }

    pub fn with_integrator(mut self, integ: Integrator) -> Self {
        self.integ = integ;
        self
    }

    fn check_config(&self, agent: AgentId, config: &[CellId]) -> Result<(), AbstractionError> {
        let expected = self.net.neighbors(agent).len() + 1;
        if config.len() != expected {
            return Err(AbstractionError::Arity {
                agent,
                config: config.to_vec(),
                expected,
            });
        }
        if let Some(&bad) = config.iter().find(|&&l| l >= self.dec.len()) {
            return Err(AbstractionError::UnknownCell(bad));
        }
        Ok(())
    }

    /// Transitions and action classes of one configuration.
    pub fn build_config(&self, agent: AgentId, config: &[CellId]) -> Result<ConfigStatus, AbstractionError> {
        self.check_config(agent, config)?;
        let refs = ReferencePoints::from_config(self.net, self.dec, agent, config)?;
        let domain = self.dec.domain();
        let traj = match controller::integrate_reference(self.net, agent, &refs, self.params.dt, domain, &self.integ) {
            Ok(t) => t,
            Err(ControllerError::ExitedDomain { time, .. }) => {
                return Ok(ConfigStatus::Flagged {
                    reason: format!("reference trajectory leaves the domain at t = {time:e}"),
                })
            }
            Err(e) => return Err(e.into()),
        };
        let chi = traj.endpoint;
        let r = self.params.r;
        if !domain.contains_ball(&chi, r, self.dec.eps_geo()) {
            return Ok(ConfigStatus::Flagged {
                reason: format!(
                    "reachable ball leaves the domain (margin {:e} < r = {r:e})",
                    domain.margin(&chi)
                ),
            });
        }
        let successors = self.dec.cells_meeting_ball(&chi, r, self.open_w);
        let mut classes = Vec::with_capacity(successors.len());
        for l in successors {
            let gap = self.dec.valid_region_distance(l, &chi);
            let target = if self.open_w {
                open_target(self.dec, l, &chi, r, gap)
            } else {
                closed_target(self.dec, l, &chi, r, gap)
            };
            let w_star = linalg::scale(&linalg::sub(&target, &chi), 1.0 / self.params.dt);
            classes.push(ActionClass {
                successor: l,
                w_star,
                target,
                gap,
            });
        }
        Ok(ConfigStatus::Built {
            chi_end: chi,
            level: traj.level,
            err_estimate: traj.err_estimate,
            classes,
        })
    }

    /// Builds every configuration from `enumerator` in parallel.
    pub fn build_controlled_ts(
        &self,
        agent: AgentId,
        enumerator: &ConfigEnumerator,
    ) -> Result<ControlledTs, AbstractionError> {
        let width = self.net.neighbors(agent).len() + 1;
        let configs = enumerator.configs(self.dec.len(), width)?;
        let mut ts = ControlledTs::empty(agent, self.params, self.open_w);
        self.extend(&mut ts, &configs)?;
        Ok(ts)
    }

    /// Builds the configurations of `configs` missing from `ts`.
    pub fn extend(&self, ts: &mut ControlledTs, configs: &[CellConfig]) -> Result<usize, AbstractionError> {
        let mut missing: Vec<&CellConfig> = configs.iter().filter(|c| !ts.contains(c)).collect();
        missing.sort_unstable();
        missing.dedup();
        let built: Vec<(CellConfig, ConfigStatus)> = missing
            .par_iter()
            .map(|c| Ok(((*c).clone(), self.build_config(ts.agent, c)?)))
            .collect::<Result<_, AbstractionError>>()?;
        let n = built.len();
        for (c, s) in built {
            ts.insert(c, s);
        }
        Ok(n)
    }
}

/// Nearest point to the reference point of `l` of `S_l ∩ B(χ; r)` pulled
/// inward by `δ = min(1e-6·side, (r − gap)/(4√n))`, so integration error
/// cannot push the endpoint across a face of the successor square.
fn closed_target(dec: &CellDecomposition, l: CellId, chi: &[f64], r: f64, gap: f64) -> Point {
    let cell = dec.cell(l);
    let n = chi.len() as f64;
    let delta = (1e-6 * dec.side()).min((r - gap).max(0.0) / (4.0 * n.sqrt()));
    let square = cell.square().shrunk(delta);
    let r_eff = r - delta;
    let ball = Ball::new(chi.to_vec(), r_eff);
    let p = geometry::nearest_in_intersection(
        &cell.reference_point,
        &[ConvexRegion::Ball(ball), ConvexRegion::Square(square.clone())],
        50,
        1e-12 * dec.side(),
    );
    settle_in_ball(&square, chi, r_eff, p)
}

/// Moves `p ∈ square` toward the point of the square nearest to `χ` until it
/// lies in `B(χ; r)`. Dykstra ends on the square, so `p` may sit a hair
/// outside the ball.
fn settle_in_ball(square: &Square, chi: &[f64], r: f64, p: Point) -> Point {
    if linalg::dist(&p, chi) <= r {
        return p;
    }
    let q = square.project(chi);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let x = linalg::axpy(&p, mid, &linalg::sub(&q, &p));
        if linalg::dist(&x, chi) <= r {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = square.project(&linalg::axpy(&p, hi, &linalg::sub(&q, &p)));
    if linalg::dist(&x, chi) <= r {
        x
    } else {
        q
    }
}

/// Open-W representative: strictly inside the ball and away from the
/// square's faces, so it belongs to exactly one closed square.
fn open_target(dec: &CellDecomposition, l: CellId, chi: &[f64], r: f64, gap: f64) -> Point {
    let cell = dec.cell(l);
    let n = chi.len() as f64;
    let delta = (1e-6 * dec.side()).min((r - gap) / (4.0 * n.sqrt()));
    let square = cell.square().shrunk(delta);
    let r_eff = 0.5 * (r + gap);
    let ball = Ball::new(chi.to_vec(), r_eff);
    let p = geometry::nearest_in_intersection(
        &cell.reference_point,
        &[ConvexRegion::Ball(ball), ConvexRegion::Square(square.clone())],
        50,
        1e-12 * dec.side(),
    );
    settle_in_ball(&square, chi, r_eff, p)
}

/// Successors of a joint cell assignment in the product system, streamed.
pub fn product_step<'s>(
    net: &AgentNetwork,
    systems: &'s [&'s ControlledTs],
    joint: &[CellId],
) -> Result<impl Iterator<Item = Vec<CellId>> + 's, AbstractionError> {
    if systems.len() != net.len() {
        return Err(AbstractionError::SystemCount {
            expected: net.len(),
            got: systems.len(),
        });
    }
    let posts = systems
        .iter()
        .enumerate()
        .map(|(i, ts)| ts.post(&project_config(net, i, joint)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(posts.into_iter().multi_cartesian_product())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{self, PlanningConstants};
    use crate::dynamics::ExampleSystem;
    use crate::geometry::Domain;

    fn small_setup() -> (ExampleSystem, DiscretizationParams, CellDecomposition) {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        let c = PlanningConstants::from_network(&ex.network).unwrap();
        let lambda = 0.3;
        let cap = discretization::dmax_cap(lambda, &c);
        let params = DiscretizationParams::general_max_dt(lambda, 0.0, &c, cap, 20.0).unwrap();
        let side = cap / 2f64.sqrt();
        let k = 3.0;
        let dom = Domain::boxed(vec![-k * side, -k * side], vec![k * side, k * side]).unwrap();
        let dec = CellDecomposition::build_grid(dom, side).unwrap();
        (ex, params, dec)
    }

    #[test]
    fn post_matches_ball_rule() {
        let (ex, params, dec) = small_setup();
        let ctx = AbstractionContext::new(&ex.network, &params, &dec);
        let ts = ctx.build_controlled_ts(1, &ConfigEnumerator::Exhaustive).unwrap();
        assert_eq!(ts.len(), dec.len());
        for (c, s) in ts.configs() {
            if let ConfigStatus::Built { chi_end, classes, .. } = s {
                let expect = dec.cells_meeting_ball(chi_end, params.r, false);
                let got: Vec<_> = classes.iter().map(|a| a.successor).collect();
                assert_eq!(got, expect, "config {c:?}");
                for a in classes {
                    assert!(linalg::norm(&a.w_star) <= params.w_radius * (1.0 + 1e-12));
                    assert!(dec.in_valid_region(a.successor, &a.target, dec.eps_geo()));
                }
            }
        }
    }

    #[test]
    fn unbuilt_is_an_error_and_flagged_is_empty() {
        let (ex, params, dec) = small_setup();
        let ctx = AbstractionContext::new(&ex.network, &params, &dec);
        let ts = ctx
            .build_controlled_ts(1, &ConfigEnumerator::Explicit(vec![vec![0], vec![14]]))
            .unwrap();
        assert!(matches!(ts.post(&[7]), Err(AbstractionError::Unbuilt { .. })));
        // corner cell: the ball around the stationary reference sticks out of the box
        assert!(ts.status(&[0]).unwrap().is_flagged());
        assert!(ts.post(&[0]).unwrap().is_empty());
        assert!(!ts.post(&[14]).unwrap().is_empty());
        assert!(ts.post_from(3, &[14]).is_err());
    }

    #[test]
    fn exhaustive_guard() {
        let e = ConfigEnumerator::Exhaustive.configs(10_000, 2);
        assert!(matches!(e, Err(AbstractionError::TooManyConfigs(_))));
        assert_eq!(ConfigEnumerator::Exhaustive.configs(3, 2).unwrap().len(), 9);
    }

    #[test]
    fn projection_onto_neighbors() {
        let ex = ExampleSystem::new(10.0, 10.0).unwrap();
        assert_eq!(project_config(&ex.network, 0, &[10, 11, 12, 13]), vec![10, 11]);
        assert_eq!(project_config(&ex.network, 1, &[10, 11, 12, 13]), vec![11]);
        assert_eq!(project_config(&ex.network, 3, &[10, 11, 12, 13]), vec![13, 12]);
    }

    #[test]
    fn product_cardinality() {
        let net = crate::dynamics::AgentNetwork::new(
            2,
            vec![
                crate::dynamics::AgentSpec {
                    neighbors: vec![],
                    terms: vec![],
                },
                crate::dynamics::AgentSpec {
                    neighbors: vec![],
                    terms: vec![],
                },
            ],
            crate::dynamics::Bounds {
                m: 1.0,
                l1: 0.0,
                l2: 1.0,
                v_max: 0.5,
            },
        )
        .unwrap();
        let a = ControlledTs::from_transitions(0, 2, [(vec![0], vec![0, 1, 2])]);
        let b = ControlledTs::from_transitions(1, 2, [(vec![5], vec![1, 2, 3, 4])]);
        let systems = [&a, &b];
        let succ: Vec<_> = product_step(&net, &systems, &[0, 5]).unwrap().collect();
        assert_eq!(succ.len(), 12);
        assert!(product_step(&net, &systems, &[1, 5]).is_err());
    }

    #[test]
    fn exports_round_trip() {
        let ts = ControlledTs::from_transitions(0, 2, [(vec![0, 1], vec![0, 2]), (vec![1, 1], vec![3])]);
        let csv = ts.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "l_i,l_j1,l_i_next,w_0,w_1");
        assert_eq!(lines.len(), 4);
        let back = parse_dot(&ts.to_dot()).unwrap();
        assert_eq!(back, ts.edges());
        let empty = ControlledTs::from_transitions(0, 2, []);
        assert!(parse_dot(&empty.to_dot()).unwrap().is_empty());
        assert_eq!(empty.to_csv().lines().count(), 1);
        assert_eq!(empty.to_json()["configs"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn open_mode_targets_are_unambiguous() {
        let (ex, params, dec) = small_setup();
        let ctx = AbstractionContext::new(&ex.network, &params, &dec).with_open_w(true);
        let ts = ctx.build_controlled_ts(1, &ConfigEnumerator::Exhaustive).unwrap();
        for (_, s) in ts.configs() {
            if let ConfigStatus::Built { chi_end, classes, .. } = s {
                for a in classes {
                    assert!(linalg::dist(&a.target, chi_end) < params.r);
                    let holders = dec
                        .cells()
                        .iter()
                        .filter(|c| c.square().contains(&a.target, 0.0))
                        .count();
                    assert_eq!(holders, 1);
                }
            }
        }
    }

    #[test]
    fn cells_within_distance() {
        let (_, _, dec) = small_setup();
        let near = cells_within(&dec, &[14], 0.0);
        assert_eq!(near.len(), 9);
        let all = cells_within(&dec, &[0], 100.0);
        assert_eq!(all.len(), dec.len());
    }
}
