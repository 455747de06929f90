//! Writes a trace as JSON lines, reads it back and checks it again. Two
//! runs of the same scenario give byte-identical files.
//!
//!     cargo run --example trace_files

use std::fs;
use std::path::Path;

use consensus_lab::checker::check;
use consensus_lab::scenario::{run_scenario, ScenarioFile};
use consensus_lab::sim::Trace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/hbft_paper_violation.json");
    let file = ScenarioFile::load(&path)?;

    let first = run_scenario(&file)?;
    let second = run_scenario(&file)?;
    let text = first.trace.to_jsonl();
    assert_eq!(text, second.trace.to_jsonl());

    let out = std::env::temp_dir().join("consensus-lab-trace.jsonl");
    fs::write(&out, &text)?;
    let parsed = Trace::from_jsonl(&fs::read_to_string(&out)?)?;
    println!("{} records written to {}", parsed.records.len(), out.display());

    let again = check(&parsed, &first.config);
    let direct = check(&first.trace, &first.config);
    assert_eq!(again.agreement, direct.agreement);
    println!("{}", again.to_json());
    Ok(())
}
