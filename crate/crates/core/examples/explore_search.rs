//! Bounded search for Agreement violations.
//!
//!     cargo run --release --example explore_search -- hbft
//!     cargo run --release --example explore_search -- fab 8
//!
//! The optional second argument overrides the step bound.

use std::time::Instant;

use consensus_lab::cli::describe_choice;
use consensus_lab::explorer::{explore, ExploreSpec, Outcome};
use consensus_lab::types::Protocol;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let protocol = match args.next().as_deref() {
        None | Some("hbft") => Protocol::Hbft,
        Some("fab") => Protocol::Fab,
        Some(other) => return Err(format!("unknown protocol {other:?}").into()),
    };
    let mut spec = ExploreSpec::new(protocol, 1, protocol.min_replicas(1))?;
    if let Some(steps) = args.next() {
        spec.max_steps = steps.parse()?;
    }

    let started = Instant::now();
    let result = explore(&spec)?;
    println!("{protocol} n={} in {:.1?}", spec.config.n(), started.elapsed());
    println!("{:?}", result.stats);
    match &result.outcome {
        Outcome::NoneWithinBounds => println!("no violation within {} steps", spec.max_steps),
        Outcome::Found(w) => {
            for c in &w.minimized {
                println!("  {}", describe_choice(c));
            }
            println!("{}", w.scenario.to_json_pretty());
        }
    }
    Ok(())
}
