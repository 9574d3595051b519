//! Admissible (d_max, dt) regions in the three regimes of mu, and the
//! closed-form step of the four-agent example.

use mas_abstraction::discretization::{self, DiscretizationParams, PlanningConstants};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let c = PlanningConstants::new(15.0, 5.0, 10.0)?;
    let lambda = 0.3;
    println!("M = {}, v_max = {}, L = {}, lambda = {lambda}", c.m, c.v_max, c.l);
    println!("d_max cap: {:.7}", discretization::dmax_cap(lambda, &c));

    for mu in [0.0, 1.0, 1.5, 2.0, 3.0] {
        let case = discretization::classify_case(lambda, mu)?;
        let ivs = discretization::admissible_dmax_interval(lambda, mu, &c)?;
        print!("mu = {mu:<4} case {case:?}: d_max in");
        for iv in &ivs {
            print!(" ({:.6}, {:.6}]", iv.lo, iv.hi);
        }
        let d = 0.5 * ivs.last().expect("at least one interval").hi;
        let dt = discretization::admissible_dt_interval(lambda, mu, &c, d)?;
        let p = DiscretizationParams::general(lambda, mu, &c, d, dt.hi, 20.0)?;
        println!(
            "; at d_max = {d:.6}: dt in [{:.6}, {:.6}], r = {:.6}, at least {} successors",
            dt.lo,
            dt.hi,
            p.r,
            discretization::min_transitions(mu, 2).max(1)
        );
    }

    for lambda in [0.1, 0.3, 0.5] {
        let (dt_bar, d_bar) = discretization::example_dt_dmax(lambda, 10.0)?;
        let (dt, nt) = discretization::snap_dt(dt_bar, 2.0)?;
        println!(
            "example, lambda = {lambda}: dt_bar = {dt_bar:.6}, d_max_bar = {d_bar:.6}, snapped dt = {dt:.6} (NT = {nt}), d_max at dt = {:.6}",
            discretization::example_dmax_for_dt(lambda, 10.0, dt)
        );
    }
    Ok(())
}
