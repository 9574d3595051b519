//! Builds an agent's controlled transition system over the configurations near
//! the initial cells, in closed- and open-W mode, and exports it.

use mas_abstraction::abstraction::{self, ConfigEnumerator};
use mas_abstraction::workflow::ExampleSetup;
use mas_abstraction::ExampleSystem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ExampleSetup::new(0.3, 10.0, 10.0, 2.0)?;
    let dec = &setup.dec;
    let x0 = ExampleSystem::initial_states();
    let own = abstraction::cells_within(dec, &[dec.locate(&x0[2])?], 0.3);
    let leader = abstraction::cells_within(dec, &[dec.locate(&x0[1])?], 0.3);
    let configs = ConfigEnumerator::Product(vec![own, leader]);

    for open_w in [false, true] {
        let ctx = setup.context().with_open_w(open_w);
        let ts = ctx.build_controlled_ts(2, &configs)?;
        let sizes: Vec<usize> = ts.configs().map(|(_, s)| s.classes().len()).collect();
        println!(
            "open_w = {open_w}: {} configurations, {} flagged, {} edges, {}..{} successors each",
            ts.len(),
            ts.flagged_count(),
            ts.edge_count(),
            sizes.iter().min().unwrap_or(&0),
            sizes.iter().max().unwrap_or(&0)
        );
        if !open_w {
            let dir = std::env::temp_dir();
            std::fs::write(dir.join("agent2.csv"), ts.to_csv())?;
            std::fs::write(dir.join("agent2.dot"), ts.to_dot())?;
            let back = abstraction::parse_dot(&ts.to_dot())?;
            println!("DOT round trip: {} edges; files in {}", back.len(), dir.display());
        }
    }
    Ok(())
}
