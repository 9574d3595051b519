//! Closed-loop run of the example: the decoupled agent follows its input, the
//! others switch feedback laws every dt. Checks invariance, the input bound
//! and connectivity, and writes the trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mas_abstraction::reachability::PiecewiseInput;
use mas_abstraction::simulate;
use mas_abstraction::workflow::{self, ExampleSetup};
use mas_abstraction::ExampleSystem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ExampleSetup::new(0.3, 10.0, 10.0, 2.0)?;
    let x0 = ExampleSystem::initial_states();
    let input = PiecewiseInput::constant(ExampleSystem::drifter_input());

    let choosers = [
        ("min |w|", simulate::min_input_chooser()),
        ("random", simulate::random_chooser(ChaCha8Rng::seed_from_u64(3))),
    ];
    for (name, chooser) in choosers {
        let run = workflow::example_closed_loop(&setup, &x0, &input, chooser, true)?;
        let check = run.validate(setup.params.v_max);
        println!(
            "{name}: {} steps, valid {}, max |k| per agent {:.3?}, |x0 - x1| <= {:.3}, |x1 - x2| <= {:.3}",
            run.steps,
            check.is_ok(),
            run.max_k,
            run.max_distance(0, 1),
            run.max_distance(1, 2)
        );
        println!("  final positions {:.3?}", run.nodes.last().expect("nodes"));
        if name == "random" {
            let path = std::env::temp_dir().join("closed_loop.csv");
            std::fs::write(&path, run.trace_csv())?;
            println!("  trace in {}", path.display());
        }
    }
    Ok(())
}
