//! Randomized soundness campaign on the example grid, and the same campaign
//! with an inadmissible step as a negative control.

use mas_abstraction::workflow::{self, ExampleSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ExampleSetup::new(0.3, 10.0, 10.0, 2.0)?;
    for (label, s) in [
        ("admissible dt", setup.clone()),
        ("dt x 3", setup.with_unchecked_dt(3.0 * setup.dt)),
    ] {
        let camp = workflow::transition_campaign(&s.context(), 60, 2, 10.0, 64, false, 11)?;
        println!(
            "{label}: {}/{} trials pass, max |k| {:.3} on trajectories, {:.3} in sampled cell states, worst endpoint error {:.1e} of tolerance",
            camp.passed,
            camp.trials.len(),
            camp.max_k,
            camp.property_max_k,
            camp.worst_endpoint_ratio
        );
        if let Some(t) = camp.trials.iter().find(|t| !t.passed) {
            println!(
                "  e.g. agent {} config {:?} -> {}: in successor {}, property max |k| {:.3?}",
                t.agent, t.config, t.successor, t.in_successor, t.property_max_k
            );
        }
    }
    Ok(())
}
