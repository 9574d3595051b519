//! Fixed-input workflow: the decoupled agent drifts under a constant input,
//! its followers reach forward along its cell trace and backward from target
//! boxes.

use mas_abstraction::reachability::PiecewiseInput;
use mas_abstraction::svg::{SvgCanvas, PALETTE};
use mas_abstraction::workflow::{self, ExampleSetup};
use mas_abstraction::ExampleSystem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ExampleSetup::new(0.3, 10.0, 10.0, 2.0)?;
    let x0 = ExampleSystem::initial_states();
    let input = PiecewiseInput::constant(ExampleSystem::drifter_input());
    let targets = workflow::illustrative_targets();
    let one = workflow::case_one(&setup, &x0, &input, &targets, false)?;

    println!(
        "decoupled agent ends at {:.3?}",
        one.drifter_states.last().expect("trajectory")
    );
    for agent in [0, 2, 3] {
        let f = one.forward[agent].as_ref().expect("followers are computed");
        print!(
            "agent {agent}: forward sizes {:?}",
            f.steps.iter().map(Vec::len).collect::<Vec<_>>()
        );
        if let Some(b) = &one.backward[agent] {
            print!(
                ", backward start set {} cells, target {} cells",
                b.steps[0].len(),
                b.last().len()
            );
        }
        println!(" ({} configurations built)", one.built[agent]);
    }

    let mut svg = SvgCanvas::new(setup.dec.domain(), 600.0);
    svg.domain(setup.dec.domain());
    for agent in [0, 2, 3] {
        let f = one.forward[agent].as_ref().expect("computed");
        svg.cells(&setup.dec, f.last(), PALETTE[agent], 0.6);
    }
    for t in &targets {
        let cells = workflow::cells_in_box(&setup.dec, &t.lo, &t.hi);
        svg.cells(&setup.dec, &cells, "black", 0.2);
    }
    svg.polyline(&one.drifter_states, PALETTE[1]);
    let path = std::env::temp_dir().join("case1.svg");
    std::fs::write(&path, svg.finish())?;
    println!("wrote {}", path.display());
    Ok(())
}
