//! Plans a joint discrete path for two coupled agents by breadth-first search
//! over the product system, then executes it with the hybrid feedback.

use mas_abstraction::abstraction::{AbstractionContext, ControlledTs};
use mas_abstraction::discretization::{self, DiscretizationParams, PlanningConstants};
use mas_abstraction::dynamics::AgentNetwork;
use mas_abstraction::geometry::{CellDecomposition, Domain};
use mas_abstraction::reachability::{self, OnDemand, PostSource, DEFAULT_NODE_BUDGET};
use mas_abstraction::simulate;
use mas_abstraction::ExampleSystem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ex = ExampleSystem::new(10.0, 10.0)?;
    let net = AgentNetwork::new(
        2,
        vec![ex.network.agents[0].clone(), ex.network.agents[1].clone()],
        ex.network.bounds,
    )?;
    let c = PlanningConstants::from_network(&net)?;
    let lambda = 0.3;
    let d = discretization::dmax_cap(lambda, &c);
    let side = d / 2f64.sqrt();
    let dom = Domain::boxed(vec![-8.0 * side, -8.0 * side], vec![8.0 * side, 8.0 * side])?;
    let dec = CellDecomposition::build_grid(dom, side)?;
    let params = DiscretizationParams::general_max_dt(lambda, 0.0, &c, dec.d_max(), 1.0)?;
    let ctx = AbstractionContext::new(&net, &params, &dec);

    let x0 = vec![vec![-4.5 * side, -4.5 * side], vec![-3.5 * side, -4.5 * side]];
    let start = vec![dec.locate(&x0[0])?, dec.locate(&x0[1])?];
    let goal = dec.locate(&[4.5 * side, 4.5 * side])?;
    let mut systems = vec![OnDemand::new(ctx, 0), OnDemand::new(ctx, 1)];
    let path = reachability::extract_path(&net, &mut systems, &start, |s| s[0] == goal, 40, DEFAULT_NODE_BUDGET)?
        .ok_or("goal unreachable within 40 steps")?;
    println!(
        "{} cells, dt {:.5}; path of {} steps: {:?}",
        dec.len(),
        params.dt,
        path.steps(),
        path.states
    );

    let built: Vec<&ControlledTs> = systems.iter().map(|s| s.system()).collect();
    println!(
        "consistent with the product system: {}",
        reachability::path_is_consistent(&net, &built, &path)?
    );
    let run = simulate::replay_path(&net, &dec, &built, &path, &x0, false)?;
    println!(
        "replayed: every sampled state in its planned cell, max |k| {:.4?} (v_max {})",
        run.max_k, params.v_max
    );
    Ok(())
}
