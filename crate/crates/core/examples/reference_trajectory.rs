//! One feedback law of the example: reference trajectory, the three feedback
//! components along a closed-loop segment, and the property check over the
//! inflated cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mas_abstraction::controller::{self, ReferencePoints};
use mas_abstraction::integrator::Integrator;
use mas_abstraction::simulate::{self, AgentMode};
use mas_abstraction::workflow::ExampleSetup;
use mas_abstraction::ExampleSystem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ExampleSetup::new(0.3, 10.0, 10.0, 2.0)?;
    let (net, dec) = (&setup.system.network, &setup.dec);
    let x0 = ExampleSystem::initial_states();
    let config = vec![dec.locate(&x0[0])?, dec.locate(&x0[1])?];

    let refs = ReferencePoints::from_config(net, dec, 0, &config)?;
    let traj = controller::integrate_reference(net, 0, &refs, setup.dt, dec.domain(), &Integrator::default())?;
    println!(
        "agent 0 in cell {}: chi(0) = {:?}, chi(dt) = {:?} (2^{} RK4 steps, error estimate {:.1e})",
        config[0], refs.own, traj.endpoint, traj.level, traj.err_estimate
    );

    let ctx = setup.context();
    let ts = ctx.build_controlled_ts(
        0,
        &mas_abstraction::abstraction::ConfigEnumerator::Explicit(vec![config.clone()]),
    )?;
    let classes = ts.classes(&config)?;
    println!(
        "{} successors, |w*| from {:.3} to {:.3}",
        classes.len(),
        classes
            .iter()
            .map(|c| mas_abstraction::linalg::norm(&c.w_star))
            .fold(f64::INFINITY, f64::min),
        classes
            .iter()
            .map(|c| mas_abstraction::linalg::norm(&c.w_star))
            .fold(0.0, f64::max)
    );

    let successor = classes[classes.len() / 2].successor;
    let inst = simulate::instance_for(net, dec, &ts, &config, successor, &x0[0])?.expect("class exists");
    let modes = vec![
        AgentMode::Controlled(inst.clone()),
        AgentMode::Free(mas_abstraction::reachability::PiecewiseInput::constant(
            ExampleSystem::drifter_input(),
        )),
        AgentMode::Idle,
        AgentMode::Idle,
    ];
    let seg = simulate::simulate_segment(net, dec.domain(), &modes, &x0, 0.0, setup.dt, inst.level, true)?;
    for row in seg.trace.iter().step_by(seg.trace.len() / 4) {
        let [k1, k2, k3] = row.terms[0].as_ref().expect("agent 0 is controlled");
        println!(
            "t = {:.4}: x = {:.4?}, k1 = {k1:.3?}, k2 = {k2:.3?}, k3 = {k3:.3?}, |k| = {:.4}",
            row.t, row.x[0], row.k[0]
        );
    }
    let end = &seg.end[0];
    println!("x(dt) = {end:.6?}, cell {} (target {successor})", dec.locate(end)?);

    let report = controller::check_property_p(
        &inst,
        &config,
        net,
        &setup.params,
        dec,
        2000,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    println!(
        "property check: max |k| over 2000 inflated-cell samples {:.4} (v_max {}), invariant {}",
        report.max_k, setup.params.v_max, report.p3
    );
    Ok(())
}
