//! The same adversary against FaB with six replicas. The view-1 primary
//! equivocates and one replica commits `a`; the new primary's progress
//! certificate still forces `a`.
//!
//!     cargo run --example fab_baseline

use std::path::Path;

use consensus_lab::checker::check;
use consensus_lab::replica::Replica;
use consensus_lab::scenario::{run_scenario, ScenarioFile};
use consensus_lab::sim::Node;
use consensus_lab::types::{primary_of, View};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fab_baseline.json");
    let file = ScenarioFile::load(&path)?;
    let run = run_scenario(&file)?;

    for c in run.trace.commit_events() {
        println!("{} commits {} in {}", c.replica, c.value, c.view);
    }
    let new_primary = primary_of(View(2), &run.config);
    if let Node::Correct(Replica::Fab(r)) = &run.simulation.nodes()[new_primary.index()] {
        if let Some(p) = r.last_proposal() {
            println!("new primary {new_primary} proposed {} in {}", p.value, p.view);
        }
    }
    let verdict = check(&run.trace, &run.config);
    println!("{}", verdict.to_json());
    Ok(())
}
