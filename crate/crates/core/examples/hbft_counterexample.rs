//! Replays the hBFT counterexample: an equivocating primary and a view
//! change that selects the value nobody committed.
//!
//!     cargo run --example hbft_counterexample

use std::path::Path;

use consensus_lab::checker::{check, Agreement};
use consensus_lab::cli::narrative;
use consensus_lab::scenario::{run_scenario, ScenarioFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/hbft_paper_violation.json");
    let file = ScenarioFile::load(&path)?;
    let run = run_scenario(&file)?;
    let verdict = check(&run.trace, &run.config);
    print!("{}", narrative(&file, &run, &verdict));

    if let Agreement::Violated {
        witness: [first, second],
    } = &verdict.agreement
    {
        println!();
        println!(
            "{} kept {} from view 1, while {} moved to {} in view 2",
            first.replica, first.value, second.replica, second.value
        );
    }
    Ok(())
}
