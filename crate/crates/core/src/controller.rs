//! Reference trajectories and the three-term hybrid feedback law.
//!
//! For agent `i` with reference points `(x_G, x_{j,G})`, let
//! `F(x) = f_i(x, x_{j,G})` and `χ' = F(χ)`, `χ(0) = x_G`. The feedback
//!
//! ```text
//! k1 = f_i(x_i, x_{j,G}) − f_i(x_i, x_j)
//! k2 = (x_G − x_0) / δt
//! k3 = F(χ(t)) + w − F(χ(t) + t w + (1 − t/δt)(x_0 − x_G))
//! ```
//!
//! makes `x_i(t) = χ(t) + t w + (1 − t/δt)(x_0 − x_G)` the exact closed-loop
//! solution whatever the neighbors do, so `x_i(δt) = χ(δt) + δt w`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::DiscretizationParams;
use crate::dynamics::{AgentId, AgentNetwork, DynamicsError};
use crate::geometry::{CellDecomposition, CellId, Domain, Square};
use crate::integrator::{self, Integrator};
use crate::linalg::{self, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("reference trajectory of agent {agent} leaves the domain at t = {time}")]
    ExitedDomain { agent: AgentId, time: f64 },
    #[error("time {t} outside [0, {dt}]")]
    TimeOutOfRange { t: f64, dt: f64 },
    #[error("target is {distance} from the reference endpoint, beyond radius {radius}")]
    TargetOutsideBall { distance: f64, radius: f64 },
    #[error("configuration has {got} cells, agent {agent} needs {expected}")]
    ConfigArity {
        agent: AgentId,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Reference points of an agent and its neighbors for one cell configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoints {
    pub own: Point,
    pub neighbors: Vec<Point>,
}

impl ReferencePoints {
    /// Reference points read off the decomposition for `config = (l_i, l_{j1}, …)`.
    pub fn from_config(
        net: &AgentNetwork,
        dec: &CellDecomposition,
        agent: AgentId,
        config: &[CellId],
    ) -> Result<Self, ControllerError> {
        let expected = net.neighbors(agent).len() + 1;
        if config.len() != expected {
            return Err(ControllerError::ConfigArity {
                agent,
                expected,
                got: config.len(),
            });
        }
        Ok(ReferencePoints {
            own: dec.reference_point(config[0]).to_vec(),
            neighbors: config[1..].iter().map(|&l| dec.reference_point(l).to_vec()).collect(),
        })
    }

    fn neighbor_refs(&self) -> Vec<&[f64]> {
        self.neighbors.iter().map(|p| p.as_slice()).collect()
    }
}

/// `F(x) = f_i(x, x_{j,G})`.
pub fn frozen_field(net: &AgentNetwork, agent: AgentId, refs: &ReferencePoints, x: &[f64]) -> Point {
    net.eval_f_unchecked(agent, x, &refs.neighbor_refs())
}

/// Sampled solution of `χ' = F(χ)` on `[0, δt]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub agent: AgentId,
    pub dt: f64,
    /// Substep level: `2^level` RK4 steps over `δt`.
    pub level: u32,
    pub err_estimate: f64,
    pub samples: Vec<(f64, Point)>,
    pub endpoint: Point,
    /// Every sample lies in `cl(D)`.
    pub in_domain: bool,
}

/// Endpoint `χ(δt)` at a fixed substep level.
pub fn reference_endpoint(net: &AgentNetwork, agent: AgentId, refs: &ReferencePoints, dt: f64, level: u32) -> Point {
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy.copy_from_slice(&frozen_field(net, agent, refs, y));
    };
    integrator::run_fixed(&rhs, 0.0, &refs.own, dt, 1 << level, |_, _| {})
}

/// Level chosen by step doubling, starting no lower than `integ.min_level`.
pub fn reference_level(
    net: &AgentNetwork,
    agent: AgentId,
    refs: &ReferencePoints,
    dt: f64,
    integ: &Integrator,
) -> (u32, Point, f64) {
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy.copy_from_slice(&frozen_field(net, agent, refs, y));
    };
    let sol = integ.solve(&rhs, 0.0, &refs.own, dt);
    (sol.level, sol.endpoint, sol.err_estimate)
}

/// Integrates the reference trajectory, failing if it leaves `cl(D)`.
pub fn integrate_reference(
    net: &AgentNetwork,
    agent: AgentId,
    refs: &ReferencePoints,
    dt: f64,
    domain: &Domain,
    integ: &Integrator,
) -> Result<ReferenceTrajectory, ControllerError> {
    let (level, _, err_estimate) = reference_level(net, agent, refs, dt, integ);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy.copy_from_slice(&frozen_field(net, agent, refs, y));
    };
    let tol = 1e-12 * domain.diameter();
    let mut samples = Vec::with_capacity((1 << level) + 1);
    let mut exit = None;
    let endpoint = integrator::run_fixed(&rhs, 0.0, &refs.own, dt, 1 << level, |t, y| {
        if exit.is_none() && !domain.contains_closed(y, tol) {
            exit = Some(t);
        }
        samples.push((t, y.to_vec()));
    });
    if let Some(time) = exit {
        return Err(ControllerError::ExitedDomain { agent, time });
    }
    Ok(ReferenceTrajectory {
        agent,
        dt,
        level,
        err_estimate,
        samples,
        endpoint,
        in_domain: true,
    })
}

/// `w = (target − χ(δt)) / δt`, provided the target lies in `B(χ(δt); r)`.
pub fn w_for_target(chi_end: &[f64], target: &[f64], dt: f64, r: f64) -> Result<Point, ControllerError> {
    let distance = linalg::dist(target, chi_end);
    if distance > r * (1.0 + 1e-12) {
        return Err(ControllerError::TargetOutsideBall { distance, radius: r });
    }
    Ok(linalg::scale(&linalg::sub(target, chi_end), 1.0 / dt))
}

/// Lower bound `v / (2 M L1 max√N_i)` on the lifetime of the reference
/// trajectory; infinite when no agent has neighbors.
pub fn lemma1_floor(m: f64, l1: f64, v_max: f64, max_sqrt_neighbors: f64) -> f64 {
    let den = 2.0 * m * l1 * max_sqrt_neighbors;
    if den > 0.0 {
        v_max / den
    } else {
        f64::INFINITY
    }
}

/// The three feedback components at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct KTerms {
    pub k1: Point,
    pub k2: Point,
    pub k3: Point,
}

impl KTerms {
    pub fn total(&self) -> Point {
        let mut k = linalg::add(&self.k1, &self.k2);
        linalg::add_assign(&mut k, &self.k3);
        k
    }
}

/// Feedback `k_{i,ℓ_i}(·; x_0, w)` for one agent over one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerInstance {
    pub agent: AgentId,
    pub refs: ReferencePoints,
    pub x0: Point,
    pub w: Point,
    pub dt: f64,
    /// Substep level used for the co-integrated reference.
    pub level: u32,
}

impl ControllerInstance {
    /// Modified trajectory `χ(t) + t w + (1 − t/δt)(x_0 − x_G)`.
    pub fn shifted(&self, t: f64, chi: &[f64]) -> Point {
        let a = 1.0 - t / self.dt;
        chi.iter()
            .zip(&self.w)
            .zip(self.x0.iter().zip(&self.refs.own))
            .map(|((c, w), (x0, xg))| c + t * w + a * (x0 - xg))
            .collect()
    }

    /// Feedback components given `χ(t)`.
    pub fn terms(&self, net: &AgentNetwork, t: f64, x_i: &[f64], x_j: &[&[f64]], chi: &[f64]) -> KTerms {
        let i = self.agent;
        let refs = self.refs.neighbor_refs();
        let k1 = linalg::sub(&net.eval_f_unchecked(i, x_i, &refs), &net.eval_f_unchecked(i, x_i, x_j));
        let k2 = linalg::scale(&linalg::sub(&self.refs.own, &self.x0), 1.0 / self.dt);
        let hat = self.shifted(t, chi);
        let mut k3 = net.eval_f_unchecked(i, chi, &refs);
        linalg::add_assign(&mut k3, &self.w);
        let f_hat = net.eval_f_unchecked(i, &hat, &refs);
        for (a, b) in k3.iter_mut().zip(&f_hat) {
            *a -= b;
        }
        KTerms { k1, k2, k3 }
    }

    /// `k` at `(t, x_i, x_j)` with `χ(t)` integrated from scratch at this
    /// instance's level (the step grid is truncated at `t`).
    pub fn eval_k(&self, net: &AgentNetwork, t: f64, x_i: &[f64], x_j: &[&[f64]]) -> Result<Point, ControllerError> {
        if !(t >= 0.0) || t > self.dt * (1.0 + 1e-12) {
            return Err(ControllerError::TimeOutOfRange { t, dt: self.dt });
        }
        let expected = net.neighbors(self.agent).len();
        if x_j.len() != expected {
            return Err(DynamicsError::Arity {
                agent: self.agent,
                expected,
                got: x_j.len(),
            }
            .into());
        }
        let chi = self.chi_at(net, t.min(self.dt));
        Ok(self.terms(net, t, x_i, x_j, &chi).total())
    }

    /// `χ(t)` with the step of the `2^level` grid (last step shortened).
    pub fn chi_at(&self, net: &AgentNetwork, t: f64) -> Point {
        let h = self.dt / (1u64 << self.level) as f64;
        let full = (t / h).floor() as usize;
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy.copy_from_slice(&frozen_field(net, self.agent, &self.refs, y));
        };
        let mut y = if full > 0 {
            integrator::run_fixed(&rhs, 0.0, &self.refs.own, full as f64 * h, full, |_, _| {})
        } else {
            self.refs.own.clone()
        };
        let rest = t - full as f64 * h;
        if rest > 0.0 {
            y = integrator::run_fixed(&rhs, full as f64 * h, &y, rest, 1, |_, _| {});
        }
        y
    }
}

/// Outcome of [`check_property_p`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    /// Local Lipschitz continuity holds by construction of the term algebra.
    pub p1: bool,
    pub p2: bool,
    pub p3: bool,
    pub max_k: f64,
    pub p2_witness: Option<P2Witness>,
    /// First time the modified trajectory leaves `cl(D)`, if any.
    pub p3_exit: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2Witness {
    pub t: f64,
    pub x_i: Point,
    pub x_j: Vec<Point>,
    pub k_norm: f64,
}

/// Uniform sample of `(square + B(radius)) ∩ cl(D)`.
pub fn sample_inflated<R: Rng + ?Sized>(square: &Square, radius: f64, domain: &Domain, rng: &mut R) -> Point {
    loop {
        let x: Point = square
            .lo
            .iter()
            .zip(&square.hi)
            .map(|(a, b)| (a - radius) + (b - a + 2.0 * radius) * rng.random::<f64>())
            .collect();
        if square.distance(&x) <= radius && domain.contains_closed(&x, 0.0) {
            return x;
        }
    }
}

/// Checks (P1)–(P3) for `inst` whose reference config is `config`.
///
/// (P2) samples `samples` points of the inflated cells `(S + B(R_max)) ∩ D`
/// with `t` on the substep grid; (P3) checks the modified trajectory at every
/// substep.
pub fn check_property_p<R: Rng + ?Sized>(
    inst: &ControllerInstance,
    config: &[CellId],
    net: &AgentNetwork,
    params: &DiscretizationParams,
    dec: &CellDecomposition,
    samples: usize,
    rng: &mut R,
) -> PropertyReport {
    let steps = 1usize << inst.level;
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        dy.copy_from_slice(&frozen_field(net, inst.agent, &inst.refs, y));
    };
    let mut chi = Vec::with_capacity(steps + 1);
    integrator::run_fixed(&rhs, 0.0, &inst.refs.own, inst.dt, steps, |t, y| {
        chi.push((t, y.to_vec()))
    });

    let domain = dec.domain();
    let tol = dec.eps_geo();
    let p3_exit = chi
        .iter()
        .find(|(t, c)| !domain.contains_closed(&inst.shifted(*t, c), tol))
        .map(|(t, _)| *t);

    let squares: Vec<Square> = config.iter().map(|&l| dec.cell(l).square()).collect();
    let mut max_k = 0.0_f64;
    let mut witness = None;
    for _ in 0..samples {
        let (t, c) = &chi[rng.random_range(0..chi.len())];
        let x_i = sample_inflated(&squares[0], params.r_max, domain, rng);
        let x_j: Vec<Point> = squares[1..]
            .iter()
            .map(|s| sample_inflated(s, params.r_max, domain, rng))
            .collect();
        let refs: Vec<&[f64]> = x_j.iter().map(|p| p.as_slice()).collect();
        let k = linalg::norm(&inst.terms(net, *t, &x_i, &refs, c).total());
        if k > max_k {
            max_k = k;
            if k > params.v_max + 1e-9 {
                witness = Some(P2Witness {
                    t: *t,
                    x_i: x_i.clone(),
                    x_j: x_j.clone(),
                    k_norm: k,
                });
            }
        }
    }
    PropertyReport {
        p1: true,
        p2: witness.is_none(),
        p3: p3_exit.is_none(),
        max_k,
        p2_witness: witness,
        p3_exit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::PlanningConstants;
    use crate::dynamics::{AgentSpec, Bounds, ExampleSystem, Term};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example() -> ExampleSystem {
        ExampleSystem::new(10.0, 10.0).unwrap()
    }

    #[test]
    fn stationary_reference_for_decoupled_agent() {
        let ex = example();
        let refs = ReferencePoints {
            own: vec![0.0, 0.0],
            neighbors: vec![],
        };
        let tr = integrate_reference(&ex.network, 1, &refs, 0.1, &ex.domain, &Integrator::default()).unwrap();
        assert!(tr.samples.iter().all(|(_, p)| p == &vec![0.0, 0.0]));
    }

    #[test]
    fn follower_reference_matches_closed_form() {
        let ex = example();
        let refs = ReferencePoints {
            own: vec![0.0, 0.0],
            neighbors: vec![vec![1.0, 0.0]],
        };
        let dt = 0.5;
        let tr = integrate_reference(&ex.network, 0, &refs, dt, &ex.domain, &Integrator::default()).unwrap();
        assert_relative_eq!(tr.endpoint[0], 1.0 - (-dt).exp(), epsilon = 1e-8);
        assert_relative_eq!(tr.endpoint[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_field_reference_is_linear() {
        let net = AgentNetwork::new(
            2,
            vec![AgentSpec {
                neighbors: vec![],
                terms: vec![Term::Constant { value: vec![1.0, -2.0] }],
            }],
            Bounds {
                m: 3.0,
                l1: 0.0,
                l2: 1.0,
                v_max: 1.0,
            },
        )
        .unwrap();
        let dom = Domain::disk(vec![0.0, 0.0], 10.0).unwrap();
        let refs = ReferencePoints {
            own: vec![0.5, 0.5],
            neighbors: vec![],
        };
        let tr = integrate_reference(&net, 0, &refs, 0.25, &dom, &Integrator::default()).unwrap();
        assert_relative_eq!(tr.endpoint[0], 0.75, epsilon = 1e-14);
        assert_relative_eq!(tr.endpoint[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn exit_is_reported_with_time() {
        let net = AgentNetwork::new(
            2,
            vec![AgentSpec {
                neighbors: vec![],
                terms: vec![Term::Constant { value: vec![2.0, 0.0] }],
            }],
            Bounds {
                m: 3.0,
                l1: 0.0,
                l2: 1.0,
                v_max: 1.0,
            },
        )
        .unwrap();
        let dom = Domain::disk(vec![0.0, 0.0], 1.0).unwrap();
        let refs = ReferencePoints {
            own: vec![0.0, 0.0],
            neighbors: vec![],
        };
        match integrate_reference(&net, 0, &refs, 1.0, &dom, &Integrator::default()) {
            Err(ControllerError::ExitedDomain { time, .. }) => assert!(time > 0.5 && time <= 0.625),
            other => panic!("{other:?}"),
        }
    }

    fn instance(x0: Point, w: Point, refs: ReferencePoints, dt: f64) -> ControllerInstance {
        ControllerInstance {
            agent: 0,
            refs,
            x0,
            w,
            dt,
            level: 6,
        }
    }

    #[test]
    fn feedback_vanishes_at_references() {
        let ex = example();
        let refs = ReferencePoints {
            own: vec![1.0, 2.0],
            neighbors: vec![vec![2.0, 2.5]],
        };
        let inst = instance(refs.own.clone(), vec![0.0, 0.0], refs.clone(), 0.07);
        for t in [0.0, 0.03, 0.07] {
            let chi = inst.chi_at(&ex.network, t);
            let k = inst.eval_k(&ex.network, t, &chi, &[&refs.neighbors[0]]).unwrap();
            assert!(linalg::norm(&k) < 1e-14, "t = {t}: {k:?}");
        }
        assert!(inst.eval_k(&ex.network, 0.08, &[0.0, 0.0], &[&[0.0, 0.0]]).is_err());
        assert!(inst.eval_k(&ex.network, 0.01, &[0.0, 0.0], &[]).is_err());
    }

    #[test]
    fn only_offset_term_without_drift() {
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
        let refs = ReferencePoints {
            own: vec![1.0, 1.0],
            neighbors: vec![],
        };
        let inst = ControllerInstance {
            agent: 0,
            refs,
            x0: vec![0.0, 0.5],
            w: vec![0.0, 0.0],
            dt: 0.5,
            level: 3,
        };
        let k = inst.eval_k(&net, 0.2, &[0.3, 0.3], &[]).unwrap();
        assert_relative_eq!(k[0], 2.0);
        assert_relative_eq!(k[1], 1.0);
    }

    #[test]
    fn first_term_cancels_on_shifted_trajectory() {
        let ex = example();
        let refs = ReferencePoints {
            own: vec![1.0, 2.0],
            neighbors: vec![vec![2.0, 2.5]],
        };
        let inst = instance(vec![1.05, 1.97], vec![0.3, -0.2], refs.clone(), 0.07);
        for t in [0.0, 0.035, 0.07] {
            let chi = inst.chi_at(&ex.network, t);
            let hat = inst.shifted(t, &chi);
            let terms = inst.terms(&ex.network, t, &hat, &[&refs.neighbors[0]], &chi);
            assert!(linalg::norm(&terms.k1) == 0.0);
        }
    }

    #[test]
    fn w_targets() {
        assert_eq!(
            w_for_target(&[1.0, 0.0], &[1.0, 0.0], 0.1, 0.2).unwrap(),
            vec![0.0, 0.0]
        );
        let w = w_for_target(&[1.0, 0.0], &[1.1, 0.0], 0.1, 0.1).unwrap();
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-12);
        let w = w_for_target(&[0.0, 0.0], &[0.0, 0.15], 0.1, 0.15).unwrap();
        assert_relative_eq!(linalg::norm(&w), 1.5, epsilon = 1e-12);
        assert!(w_for_target(&[0.0, 0.0], &[0.0, 0.2], 0.1, 0.15).is_err());
    }

    #[test]
    fn lemma1_values() {
        assert_relative_eq!(lemma1_floor(15.0, 1.0, 5.0, 1.0), 1.0 / 6.0);
        assert_relative_eq!(lemma1_floor(30.0, 1.0, 10.0, 1.0), 1.0 / 6.0);
        assert_relative_eq!(lemma1_floor(15.0, 1.0, 5.0, 2f64.sqrt()), 1.0 / 6.0 / 2f64.sqrt());
    }

    fn general_setup(d_scale: f64) -> (ExampleSystem, DiscretizationParams, CellDecomposition) {
        let ex = example();
        let c = PlanningConstants::from_network(&ex.network).unwrap();
        let lambda = 0.3;
        let cap = crate::discretization::dmax_cap(lambda, &c);
        let d = 0.5 * cap;
        let base = DiscretizationParams::general_max_dt(lambda, 0.0, &c, d, 20.0).unwrap();
        let params = if d_scale == 1.0 {
            base
        } else {
            DiscretizationParams::unchecked(lambda, 0.0, &c, d * d_scale, base.dt)
        };
        let side = params.d_max / 2f64.sqrt();
        let k = 8.0;
        let dom = Domain::boxed(vec![-k * side, -k * side], vec![k * side, k * side]).unwrap();
        let dec = CellDecomposition::build_grid(dom, side).unwrap();
        (ex, params, dec)
    }

    fn random_instance(
        ex: &ExampleSystem,
        params: &DiscretizationParams,
        dec: &CellDecomposition,
        rng: &mut ChaCha8Rng,
    ) -> (ControllerInstance, Vec<CellId>) {
        let config = vec![rng.random_range(0..dec.len()), rng.random_range(0..dec.len())];
        let refs = ReferencePoints::from_config(&ex.network, dec, 0, &config).unwrap();
        let x0 = dec.sample_in_cell(config[0], rng);
        let ang = std::f64::consts::TAU * rng.random::<f64>();
        let w = vec![params.w_radius * ang.cos(), params.w_radius * ang.sin()];
        let inst = ControllerInstance {
            agent: 0,
            refs,
            x0,
            w,
            dt: params.dt,
            level: 4,
        };
        (inst, config)
    }

    #[test]
    fn property_p_holds_for_admissible_case_one() {
        let (ex, params, dec) = general_setup(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let (inst, config) = random_instance(&ex, &params, &dec, &mut rng);
            let rep = check_property_p(&inst, &config, &ex.network, &params, &dec, 200, &mut rng);
            assert!(rep.p1 && rep.p2, "{rep:?}");
            assert!(rep.max_k <= params.v_max + 1e-9);
        }
    }

    #[test]
    fn property_p2_fails_with_inflated_cells() {
        let (ex, params, dec) = general_setup(40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut violated = false;
        for _ in 0..20 {
            let (inst, config) = random_instance(&ex, &params, &dec, &mut rng);
            let rep = check_property_p(&inst, &config, &ex.network, &params, &dec, 200, &mut rng);
            violated |= !rep.p2;
        }
        assert!(violated);
    }

    #[test]
    fn property_p3_with_zero_offset_follows_reference() {
        let (ex, params, dec) = general_setup(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let config = vec![dec.len() / 2, dec.len() / 2];
        let refs = ReferencePoints::from_config(&ex.network, &dec, 0, &config).unwrap();
        let inst = ControllerInstance {
            agent: 0,
            x0: refs.own.clone(),
            refs,
            w: vec![0.0, 0.0],
            dt: params.dt,
            level: 4,
        };
        let rep = check_property_p(&inst, &config, &ex.network, &params, &dec, 10, &mut rng);
        assert!(rep.p3);
    }
}
