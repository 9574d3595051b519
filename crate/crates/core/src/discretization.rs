//! Admissible space-time discretizations `(d_max, δt)`.
//!
//! Three regimes, selected by the transition-count parameter `μ` relative to
//! `λ`, bound the cell diameter and the time step so that the hybrid feedback
//! stays within `v_max` and every reachable ball has planning radius
//! `r = λ v_max δt ≥ (μ/2) d_max`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AgentNetwork, Bounds};

/// Relative slack used when testing interval membership.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("lambda must lie in (0, 1), got {0}")]
    Lambda(f64),
    #[error("mu must be nonnegative, got {0}")]
    Mu(f64),
    #[error("invalid constants: {0}")]
    Constants(String),
    #[error("d_max = {d_max} violates {bound} (limit {limit})")]
    DmaxOutside {
        d_max: f64,
        bound: &'static str,
        limit: f64,
    },
    #[error("dt = {dt} violates {bound} (limit {limit})")]
    DtOutside { dt: f64, bound: &'static str, limit: f64 },
    #[error("infeasible at lambda = {lambda}, mu = {mu}: d_max cap {cap} is below the floor {floor}")]
    Infeasible { lambda: f64, mu: f64, cap: f64, floor: f64 },
    #[error("complexity bounds need d_max = {expected}, got {got}")]
    ComplexityHypothesis { expected: f64, got: f64 },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    I,
    II,
    III,
}

/// Constants entering the admissible intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningConstants {
    #[serde(rename = "M")]
    pub m: f64,
    pub v_max: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl PlanningConstants {
    pub fn new(m: f64, v_max: f64, l: f64) -> Result<Self, DiscretizationError> {
        if !(v_max > 0.0) || !(m > v_max) || !(l > 0.0) || !m.is_finite() || !l.is_finite() {
            return Err(DiscretizationError::Constants(format!(
                "need 0 < v_max < M and L > 0, got M = {m}, v_max = {v_max}, L = {l}"
            )));
        }
        Ok(PlanningConstants { m, v_max, l })
    }

    /// `L = max_i (3 L2 + 4 L1 √N_i)` for the network.
    pub fn from_network(net: &AgentNetwork) -> Result<Self, DiscretizationError> {
        Self::new(net.bounds.m, net.bounds.v_max, combined_lipschitz(net))
    }
}

/// `max_i (3 L2 + 4 L1 √N_i)`.
pub fn combined_lipschitz(net: &AgentNetwork) -> f64 {
    let Bounds { l1, l2, .. } = net.bounds;
    net.agents
        .iter()
        .map(|a| 3.0 * l2 + 4.0 * l1 * (a.neighbors.len() as f64).sqrt())
        .fold(0.0, f64::max)
}

fn check_lambda(lambda: f64) -> Result<(), DiscretizationError> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(DiscretizationError::Lambda(lambda))
    }
}

fn check_mu(mu: f64) -> Result<(), DiscretizationError> {
    if mu >= 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(DiscretizationError::Mu(mu))
    }
}

pub fn classify_case(lambda: f64, mu: f64) -> Result<Case, DiscretizationError> {
    check_lambda(lambda)?;
    check_mu(mu)?;
    let a = 2.0 * lambda / (1.0 - lambda);
    Ok(if mu <= a {
        Case::I
    } else if mu >= 2.0 * a {
        Case::III
    } else {
        Case::II
    })
}

/// `(1−λ)² v² / (4ML)`: the largest diameter any regime admits.
pub fn dmax_cap(lambda: f64, c: &PlanningConstants) -> f64 {
    (1.0 - lambda).powi(2) * c.v_max.powi(2) / (4.0 * c.m * c.l)
}

/// `ḡ(μ) = 2(λ(1−λ)μ − 2λ²) v² / (μ² M L)`.
pub fn g_bar(lambda: f64, mu: f64, c: &PlanningConstants) -> f64 {
    2.0 * (lambda * (1.0 - lambda) * mu - 2.0 * lambda * lambda) * c.v_max.powi(2) / (mu * mu * c.m * c.l)
}

fn discriminant(lambda: f64, c: &PlanningConstants, d: f64) -> f64 {
    ((1.0 - lambda) * c.v_max).powi(2) - 4.0 * c.m * c.l * d
}

/// Smaller root of `ML δt² − (1−λ) v δt + d = 0`.
pub fn h_prime(lambda: f64, c: &PlanningConstants, d: f64) -> f64 {
    let b = (1.0 - lambda) * c.v_max;
    let s = discriminant(lambda, c, d).max(0.0).sqrt();
    // b - s loses digits for small d; use the product of roots instead
    2.0 * d / (b + s)
}

/// Larger root of `ML δt² − (1−λ) v δt + d = 0`.
pub fn h_double_prime(lambda: f64, c: &PlanningConstants, d: f64) -> f64 {
    let b = (1.0 - lambda) * c.v_max;
    let s = discriminant(lambda, c, d).max(0.0).sqrt();
    (b + s) / (2.0 * c.m * c.l)
}

/// Interval with closed upper end and optionally open lower end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_open: false }
    }

    pub fn left_open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_open: true }
    }

    /// Membership with relative slack [`MEMBERSHIP_SLACK`].
    pub fn contains(&self, x: f64) -> bool {
        let tol = MEMBERSHIP_SLACK * self.hi.abs().max(self.lo.abs());
        let above = if self.lo_open {
            x > self.lo - if self.lo == 0.0 { 0.0 } else { tol }
        } else {
            x >= self.lo - tol
        };
        above && x <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Admissible `d_max` values; Case II reports the two ranges split at `ḡ(μ)`.
pub fn admissible_dmax_interval(
    lambda: f64,
    mu: f64,
    c: &PlanningConstants,
) -> Result<Vec<Interval>, DiscretizationError> {
    let case = classify_case(lambda, mu)?;
    let cap = dmax_cap(lambda, c);
    Ok(match case {
        Case::I => vec![Interval::left_open(0.0, cap)],
        Case::II => {
            let g = g_bar(lambda, mu, c).min(cap);
            vec![Interval::left_open(0.0, g), Interval::left_open(g, cap)]
        }
        Case::III => vec![Interval::left_open(0.0, g_bar(lambda, mu, c))],
    })
}

/// Admissible `δt` for a given `d_max`.
///
/// The lower end is `max(h'(d), μ d / (2 λ v))`; in Case I the second term is
/// never active, in Cases II/III it takes over for `d ≤ ḡ(μ)`.
pub fn admissible_dt_interval(
    lambda: f64,
    mu: f64,
    c: &PlanningConstants,
    d_max: f64,
) -> Result<Interval, DiscretizationError> {
    let case = classify_case(lambda, mu)?;
    if !(d_max > 0.0) {
        return Err(DiscretizationError::DmaxOutside {
            d_max,
            bound: "d_max > 0",
            limit: 0.0,
        });
    }
    let cap = dmax_cap(lambda, c);
    if d_max > cap * (1.0 + MEMBERSHIP_SLACK) {
        return Err(DiscretizationError::DmaxOutside {
            d_max,
            bound: "d_max <= (1-lambda)^2 v_max^2 / (4ML)",
            limit: cap,
        });
    }
    if case == Case::III {
        let g = g_bar(lambda, mu, c);
        if d_max > g * (1.0 + MEMBERSHIP_SLACK) {
            return Err(DiscretizationError::DmaxOutside {
                d_max,
                bound: "d_max <= g_bar(mu)",
                limit: g,
            });
        }
    }
    let d = d_max.min(cap);
    let slope = mu * d / (2.0 * lambda * c.v_max);
    let lo = h_prime(lambda, c, d).max(slope);
    let hi = h_double_prime(lambda, c, d);
    if lo > hi * (1.0 + MEMBERSHIP_SLACK) {
        return Err(DiscretizationError::DmaxOutside {
            d_max,
            bound: "dt >= mu d_max / (2 lambda v_max) compatible with dt <= h''(d_max)",
            limit: hi,
        });
    }
    Ok(Interval::closed(lo.min(hi), hi))
}

/// Closed-form step and diameter of the four-agent example, derived from the
/// cell-center bounds on the feedback terms.
pub fn example_dt_dmax(lambda: f64, rho: f64) -> Result<(f64, f64), DiscretizationError> {
    check_lambda(lambda)?;
    if !(rho > 0.0) {
        return Err(DiscretizationError::NonPositive("rho"));
    }
    let dt = (-2.0 + (4.0 + 3.0 * (1.0 - lambda)).sqrt()) / 6.0;
    Ok((dt, example_dmax_for_dt(lambda, rho, dt)))
}

/// Example-mode diameter for a given step `δt`.
pub fn example_dmax_for_dt(lambda: f64, rho: f64, dt: f64) -> f64 {
    rho * ((1.0 - lambda) * dt - 4.0 * dt * dt) / (3.0 * dt + 1.0)
}

/// Largest step not exceeding `dt_bar` that divides `horizon` evenly.
pub fn snap_dt(dt_bar: f64, horizon: f64) -> Result<(f64, usize), DiscretizationError> {
    if !(dt_bar > 0.0) {
        return Err(DiscretizationError::NonPositive("dt_bar"));
    }
    if !(horizon > 0.0) {
        return Err(DiscretizationError::NonPositive("horizon"));
    }
    let q = horizon / dt_bar;
    // tolerate representation error when the quotient is meant to be integral
    let nt = if (q - q.round()).abs() <= 1e-12 * q {
        q.round()
    } else {
        q.ceil()
    }
    .max(1.0) as usize;
    Ok((horizon / nt as f64, nt))
}

/// Lower bound on the number of successors of every action: `⌊μⁿ⌋ + 1`, or
/// `μⁿ` itself when it is an integer (zero counts as one).
pub fn min_transitions(mu: f64, n: usize) -> u64 {
    let p = mu.powi(n as i32);
    let k = p.round();
    if (p - k).abs() <= 1e-9 * p.max(1.0) {
        k as u64
    } else {
        p.floor() as u64 + 1
    }
}

/// Size bounds on the individual controlled transition systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBounds {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub state_bound: f64,
    pub transition_bound: f64,
    pub product_state_bound: f64,
    pub product_transition_bound: f64,
}

/// Inputs to [`complexity_bounds`].
#[derive(Clone, Copy, Debug)]
pub struct ComplexityInput {
    pub lambda: f64,
    pub dim: usize,
    pub n_agents: usize,
    pub n_neighbors: usize,
    pub constants: PlanningConstants,
    pub domain_volume: f64,
    pub d_max: f64,
    pub d_in: f64,
}

/// Requires `d_max` equal to the cap `(1−λ)² v² / (4ML)` to `1e-9` relative.
pub fn complexity_bounds(inp: &ComplexityInput) -> Result<ComplexityBounds, DiscretizationError> {
    check_lambda(inp.lambda)?;
    let c_ = &inp.constants;
    let cap = dmax_cap(inp.lambda, c_);
    if (inp.d_max - cap).abs() > 1e-9 * cap {
        return Err(DiscretizationError::ComplexityHypothesis {
            expected: cap,
            got: inp.d_max,
        });
    }
    if !(inp.d_in > 0.0) {
        return Err(DiscretizationError::NonPositive("d_in"));
    }
    let n = inp.dim as i32;
    let c = inp.d_in / inp.d_max;
    let half_ball = crate::linalg::unit_ball_volume(inp.dim) * 0.5f64.powi(n);
    let c1 = inp.domain_volume / half_ball * (4.0 * c_.m * c_.l / (c * c_.v_max.powi(2))).powi(n);
    let ni = inp.n_neighbors as i32;
    let c2 = c1.powi(ni + 1) * (4.0 / c).powi(n);
    let one_minus = 1.0 - inp.lambda;
    let big_n = inp.n_agents as i32;
    Ok(ComplexityBounds {
        c,
        c1,
        c2,
        state_bound: c1 / one_minus.powi(2 * n),
        transition_bound: c2 / one_minus.powi((2 * (ni + 1) + 1) * n),
        product_state_bound: c1.powi(big_n) / one_minus.powi(2 * big_n * n),
        product_transition_bound: c1.powi(big_n) * (4.0 / c).powi(big_n * n) / one_minus.powi(3 * big_n * n),
    })
}

/// How the `(d_max, δt)` pair was certified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// General admissible intervals for the given case.
    General(Case),
    /// Closed-form bounds of the four-agent example (cell-center references).
    ExampleCellCenter,
    /// No admissibility check; used for negative controls.
    Unchecked,
}

/// A certified discretization with its derived lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationParams {
    pub lambda: f64,
    pub mu: f64,
    pub d_max: f64,
    pub dt: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub r: f64,
    pub r_max: f64,
    pub w_radius: f64,
    pub v_max: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub certificate: Certificate,
}

impl DiscretizationParams {
    fn assemble(lambda: f64, mu: f64, c: &PlanningConstants, d_max: f64, dt: f64, certificate: Certificate) -> Self {
        DiscretizationParams {
            lambda,
            mu,
            d_max,
            dt,
            l: c.l,
            r: lambda * c.v_max * dt,
            r_max: dt * (c.m + c.v_max),
            w_radius: lambda * c.v_max,
            v_max: c.v_max,
            m: c.m,
            certificate,
        }
    }

    /// Certifies `(d_max, δt)` against the general intervals. `domain_diameter`
    /// sets the infeasibility floor `1e-9 · diameter` on the d_max cap.
    pub fn general(
        lambda: f64,
        mu: f64,
        c: &PlanningConstants,
        d_max: f64,
        dt: f64,
        domain_diameter: f64,
    ) -> Result<Self, DiscretizationError> {
        let case = classify_case(lambda, mu)?;
        let cap = dmax_cap(lambda, c);
        let floor = 1e-9 * domain_diameter;
        if cap < floor {
            return Err(DiscretizationError::Infeasible { lambda, mu, cap, floor });
        }
        let iv = admissible_dt_interval(lambda, mu, c, d_max)?;
        if !iv.contains(dt) {
            let (bound, limit) = if dt < iv.lo {
                ("dt >= lower admissible end", iv.lo)
            } else {
                ("dt <= h''(d_max)", iv.hi)
            };
            return Err(DiscretizationError::DtOutside { dt, bound, limit });
        }
        Ok(Self::assemble(lambda, mu, c, d_max, dt, Certificate::General(case)))
    }

    /// Largest admissible step for `d_max` in the general mode.
    pub fn general_max_dt(
        lambda: f64,
        mu: f64,
        c: &PlanningConstants,
        d_max: f64,
        domain_diameter: f64,
    ) -> Result<Self, DiscretizationError> {
        let iv = admissible_dt_interval(lambda, mu, c, d_max)?;
        Self::general(lambda, mu, c, d_max, iv.hi, domain_diameter)
    }

    /// Certifies against the example's closed-form bounds: `δt ≤ δt̄(λ)` and
    /// `d_max ≤ d̄_max` evaluated at `δt`.
    pub fn example_mode(
        lambda: f64,
        rho: f64,
        c: &PlanningConstants,
        d_max: f64,
        dt: f64,
    ) -> Result<Self, DiscretizationError> {
        let (dt_bar, _) = example_dt_dmax(lambda, rho)?;
        if !(dt > 0.0) || dt > dt_bar * (1.0 + MEMBERSHIP_SLACK) {
            return Err(DiscretizationError::DtOutside {
                dt,
                bound: "0 < dt <= example dt_bar",
                limit: dt_bar,
            });
        }
        let limit = example_dmax_for_dt(lambda, rho, dt);
        if !(d_max > 0.0) || d_max > limit * (1.0 + MEMBERSHIP_SLACK) {
            return Err(DiscretizationError::DmaxOutside {
                d_max,
                bound: "d_max <= example d_max(dt)",
                limit,
            });
        }
        Ok(Self::assemble(
            lambda,
            0.0,
            c,
            d_max,
            dt,
            Certificate::ExampleCellCenter,
        ))
    }

    /// Builds parameters without any admissibility check.
    pub fn unchecked(lambda: f64, mu: f64, c: &PlanningConstants, d_max: f64, dt: f64) -> Self {
        Self::assemble(lambda, mu, c, d_max, dt, Certificate::Unchecked)
    }

    pub fn is_admissible(&self) -> bool {
        !matches!(self.certificate, Certificate::Unchecked)
    }

    /// Slacks of the four feasibility inequalities (all ≥ 0 when feasible):
    /// quadratic, slope, `R_max − d_max`, `r − (μ/2) d_max`.
    pub fn feasibility_slacks(&self) -> [f64; 4] {
        let (ml, v, dt, d) = (self.m * self.l, self.v_max, self.dt, self.d_max);
        [
            -(ml * dt * dt - (1.0 - self.lambda) * v * dt + d),
            dt - self.mu * d / (2.0 * self.lambda * v),
            self.r_max - d,
            self.r - 0.5 * self.mu * d,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k() -> PlanningConstants {
        PlanningConstants::new(15.0, 5.0, 10.0).unwrap()
    }

    #[test]
    fn case_classification() {
        assert_eq!(classify_case(0.3, 0.0).unwrap(), Case::I);
        assert_eq!(classify_case(0.3, 1.0).unwrap(), Case::II);
        assert_eq!(classify_case(0.3, 2.0).unwrap(), Case::III);
        assert!(classify_case(1.0, 0.0).is_err());
        assert!(classify_case(0.0, 0.0).is_err());
    }

    #[test]
    fn case_one_intervals() {
        let iv = admissible_dmax_interval(0.3, 0.0, &k()).unwrap();
        assert_relative_eq!(iv[0].hi, 12.25 / 600.0, max_relative = 1e-14);
        let dt = admissible_dt_interval(0.3, 0.0, &k(), 0.01).unwrap();
        assert_relative_eq!(dt.lo, 1.0 / 300.0, max_relative = 1e-13);
        assert_relative_eq!(dt.hi, 6.0 / 300.0, max_relative = 1e-13);
    }

    #[test]
    fn degenerate_interval_at_cap() {
        let cap = dmax_cap(0.3, &k());
        let dt = admissible_dt_interval(0.3, 0.0, &k(), cap).unwrap();
        assert_relative_eq!(dt.lo, 0.7 * 5.0 / 300.0, max_relative = 1e-7);
        assert_relative_eq!(dt.hi, 0.7 * 5.0 / 300.0, max_relative = 1e-7);
    }

    #[test]
    fn boundary_between_two_and_three() {
        let g = g_bar(0.3, 12.0 / 7.0, &k());
        assert_relative_eq!(g, dmax_cap(0.3, &k()), max_relative = 1e-12);
    }

    #[test]
    fn case_three_degenerate_at_gbar() {
        let mu = 2.0;
        let g = g_bar(0.3, mu, &k());
        let dt = admissible_dt_interval(0.3, mu, &k(), g).unwrap();
        assert_relative_eq!(dt.lo, dt.hi, max_relative = 1e-12);
        assert!(admissible_dt_interval(0.3, mu, &k(), g * 1.01).is_err());
    }

    #[test]
    fn dmax_out_of_range_names_bound() {
        match admissible_dt_interval(0.3, 0.0, &k(), 0.05) {
            Err(DiscretizationError::DmaxOutside { bound, .. }) => assert!(bound.contains("4ML")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn example_closed_forms() {
        let (dt, d) = example_dt_dmax(0.3, 10.0).unwrap();
        assert_relative_eq!(dt, 0.078303, epsilon = 1e-6);
        assert_relative_eq!(d, 0.245254, epsilon = 1e-6);
        let (dt, _) = example_dt_dmax(0.2, 10.0).unwrap();
        assert_relative_eq!(dt, (-2.0 + 6.4f64.sqrt()) / 6.0, max_relative = 1e-15);
        assert_relative_eq!(dt, 0.0883037, epsilon = 1e-7);
        let (dt, _) = example_dt_dmax(1.0 - 1e-12, 10.0).unwrap();
        assert!(dt < 1e-11);
    }

    #[test]
    fn snapping() {
        let (dt, nt) = snap_dt(0.078303, 2.0).unwrap();
        assert_eq!(nt, 26);
        assert_relative_eq!(dt, 2.0 / 26.0);
        assert_eq!(snap_dt(1.0, 2.0).unwrap(), (1.0, 2));
        assert_eq!(snap_dt(0.5, 2.0).unwrap(), (0.5, 4));
    }

    #[test]
    fn transition_counts() {
        assert_eq!(min_transitions(2.0, 2), 4);
        assert_eq!(min_transitions(1.5, 2), 3);
        assert_eq!(min_transitions(0.0, 2), 0);
    }

    #[test]
    fn complexity_uses_quarter_pi() {
        let c = k();
        let cap = dmax_cap(0.3, &c);
        let b = complexity_bounds(&ComplexityInput {
            lambda: 0.3,
            dim: 2,
            n_agents: 4,
            n_neighbors: 1,
            constants: c,
            domain_volume: 1.0,
            d_max: cap,
            d_in: cap / 2f64.sqrt(),
        })
        .unwrap();
        let expect = 1.0 / (std::f64::consts::PI / 4.0) * (4.0 * 150.0 / (25.0 / 2f64.sqrt())).powi(2);
        assert_relative_eq!(b.c1, expect, max_relative = 1e-12);
        let wrong = ComplexityInput {
            lambda: 0.3,
            dim: 2,
            n_agents: 4,
            n_neighbors: 1,
            constants: c,
            domain_volume: 1.0,
            d_max: cap * 1.1,
            d_in: cap,
        };
        assert!(complexity_bounds(&wrong).is_err());
    }

    #[test]
    fn example_network_constant() {
        let ex = crate::dynamics::ExampleSystem::new(10.0, 10.0).unwrap();
        let c = PlanningConstants::from_network(&ex.network).unwrap();
        assert_eq!(c.l, 10.0);
    }

    #[test]
    fn infeasibility_floor() {
        let e = DiscretizationParams::general(1.0 - 1e-7, 0.0, &k(), 1e-20, 1e-10, 20.0);
        assert!(matches!(e, Err(DiscretizationError::Infeasible { .. })));
    }

    fn finite_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-7 * x.abs().max(1e-3);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn gbar_monotonicity(lambda in 0.05f64..0.9, t in 0.02f64..0.98, s in 1.05f64..5.0) {
            let c = k();
            let a = 2.0 * lambda / (1.0 - lambda);
            let mu_rise = a * (1.0 + t);
            prop_assert!(finite_diff(|m| g_bar(lambda, m, &c), mu_rise) > 0.0);
            let mu_fall = 2.0 * a * s;
            prop_assert!(finite_diff(|m| g_bar(lambda, m, &c), mu_fall) < 0.0);
        }

        #[test]
        fn h_roots_monotone_and_bounded(lambda in 0.05f64..0.9, t in 0.01f64..0.99) {
            let c = k();
            let d = t * dmax_cap(lambda, &c);
            prop_assert!(finite_diff(|x| h_prime(lambda, &c, x), d) > 0.0);
            prop_assert!(finite_diff(|x| h_double_prime(lambda, &c, x), d) < 0.0);
            let hp = h_prime(lambda, &c, d);
            prop_assert!(hp > d / ((1.0 - lambda) * c.v_max));
            prop_assert!(d / ((1.0 - lambda) * c.v_max) >= d / (c.m + c.v_max));
        }
    }
}
