//! Builds a scenario in code. A Byzantine backup answers the PREPARE with
//! a COMMIT for a different value and tries to forge one in another
//! replica's name; neither disturbs the commit of `a`.
//!
//!     cargo run --example custom_scenario

use consensus_lab::adversary::{ByzantineScript, Emission, ScriptAction, Trigger};
use consensus_lab::checker::check;
use consensus_lab::message::{Payload, PayloadKind};
use consensus_lab::scenario::{run_scenario, Proposal, ScenarioFile, SCHEMA};
use consensus_lab::sim::RecordKind;
use consensus_lab::types::{Protocol, ReplicaId, SeqNum, Value, View};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seq = SeqNum::new(1).ok_or("sequence numbers start at 1")?;
    let byz = ReplicaId(3);
    let rogue = Payload::Commit {
        view: View(1),
        seq,
        value: Value::new("b"),
    };
    let script = ByzantineScript {
        replica: byz,
        actions: vec![ScriptAction {
            id: "equivocate".into(),
            trigger: Trigger::Receive {
                kind: PayloadKind::Prepare,
                view: View(1),
                from: None,
            },
            emit: vec![
                Emission {
                    to: vec![ReplicaId(0), ReplicaId(1), ReplicaId(2)],
                    payload: rogue.clone(),
                    sender: None,
                },
                Emission {
                    to: vec![ReplicaId(2)],
                    payload: rogue,
                    sender: Some(ReplicaId(0)),
                },
            ],
        }],
    };
    let file = ScenarioFile {
        schema: SCHEMA.into(),
        name: Some("hbft_lying_backup".into()),
        description: None,
        protocol: Protocol::Hbft,
        f: 1,
        n_replicas: 4,
        byzantine: vec![byz],
        primary_map: Default::default(),
        seq,
        initial_proposals: vec![Proposal {
            view: View(1),
            value: Value::new("a"),
            to: None,
        }],
        schedule: vec![],
        scripts: vec![script],
    };
    println!("{}", file.to_json_pretty());

    let run = run_scenario(&file)?;
    for r in run.trace.records.iter().filter(|r| r.kind == RecordKind::Reject) {
        println!("{r}");
    }
    for c in run.trace.commit_events() {
        println!("{} commits {}", c.replica, c.value);
    }
    println!("{}", check(&run.trace, &run.config).to_json());
    Ok(())
}
