//! Switching-input workflow: sampled envelope of the decoupled agent and
//! robust reach sets of a follower, compared across two values of lambda.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mas_abstraction::reachability::InputFamily;
use mas_abstraction::workflow::{self, ExampleSetup};
use mas_abstraction::ExampleSystem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x0 = ExampleSystem::initial_states();
    let family = InputFamily::example_switching();
    for lambda in [0.3, 0.4] {
        let setup = ExampleSetup::new(lambda, 10.0, 10.0, 2.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let two = workflow::case_two(&setup, &x0, &family, &[0], false, &mut rng)?;
        let env = &two.envelope;
        let reach = two.reach[0].as_ref().expect("requested");
        println!(
            "lambda {lambda}: {} cells, NT {}; envelope from {} signals, final {} raw / {} dilated cells; agent 0 robust reach sizes {:?}",
            setup.dec.len(),
            setup.nt,
            env.trajectories,
            env.raw.last().map_or(0, Vec::len),
            env.dilated.last().map_or(0, Vec::len),
            reach.steps.iter().map(Vec::len).collect::<Vec<_>>()
        );
    }
    Ok(())
}
