#![allow(dead_code)]

pub mod gen;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use consensus_lab::message::{Payload, ViewChangeReport};
use consensus_lab::scenario::{run_scenario_with, ScenarioFile};
use consensus_lab::sim::{RecordKind, Trace};
use consensus_lab::types::{primary_of, Config, ReplicaId, SeqNum, Value, View};

pub const BUNDLED: [&str; 4] = [
    "hbft_paper_violation",
    "fab_baseline",
    "hbft_unanimous",
    "fab_unanimous",
];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn load(name: &str) -> ScenarioFile {
    ScenarioFile::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn bundled() -> Vec<(&'static str, ScenarioFile)> {
    BUNDLED.iter().map(|n| (*n, load(n))).collect()
}

/// True when three runs of `file` produce byte-identical JSONL traces.
pub fn replays_identically(file: &ScenarioFile) -> bool {
    let texts: Vec<String> = (0..3)
        .map(|_| {
            run_scenario_with(file, 10_000)
                .expect("scenario runs")
                .trace
                .to_jsonl()
        })
        .collect();
    texts.windows(2).all(|w| w[0] == w[1])
}

/// Problems with message authenticity visible in a recorded trace.
///
/// Each send must come from the replica currently acting, each delivery
/// must carry the sender and payload of the send with the same id, and
/// every statement embedded in a certificate must have been sent earlier
/// by its signer (a sender may vouch for itself).
pub fn authentication_problems(trace: &Trace, config: &Config) -> Vec<String> {
    let mut problems = Vec::new();
    let mut sends: BTreeMap<u64, (ReplicaId, Payload)> = BTreeMap::new();
    let mut attested: BTreeSet<(ReplicaId, View, SeqNum, Value)> = BTreeSet::new();
    let mut reported: BTreeSet<(ReplicaId, ViewChangeReport)> = BTreeSet::new();
    let mut actor: Option<ReplicaId> = None;
    let opening = primary_of(View::INITIAL, config);

    for rec in &trace.records {
        match rec.kind {
            RecordKind::Deliver | RecordKind::Timeout => actor = rec.to,
            RecordKind::Adversary => actor = rec.from,
            _ => {}
        }
        match rec.kind {
            RecordKind::Send => {
                let (Some(id), Some(from), Some(payload)) = (rec.id, rec.from, rec.payload.clone()) else {
                    problems.push(format!("step {}: incomplete send record", rec.step));
                    continue;
                };
                let allowed = if rec.step == 0 {
                    from == opening || config.is_byzantine(from) || Some(from) == actor
                } else {
                    Some(from) == actor
                };
                if !allowed {
                    problems.push(format!(
                        "step {}: {from} sent while {actor:?} was acting",
                        rec.step
                    ));
                }
                let backed_cc = |r: &ViewChangeReport| {
                    r.commit_cert.as_ref().is_none_or(|cc| {
                        cc.attestations.iter().all(|a| {
                            *a == from || attested.contains(&(*a, cc.view, cc.seq, cc.value.clone()))
                        })
                    })
                };
                let backed = match &payload {
                    Payload::Prepare { .. } | Payload::Commit { .. } => true,
                    Payload::ViewChange(r) => backed_cc(r),
                    Payload::NewView { progress_cert, .. } => progress_cert.reports.iter().all(|sr| {
                        if sr.replica == from {
                            backed_cc(&sr.report)
                        } else {
                            reported.contains(&(sr.replica, sr.report.clone()))
                        }
                    }),
                };
                if !backed {
                    problems.push(format!(
                        "step {}: {from} embedded an unbacked statement",
                        rec.step
                    ));
                }
                match &payload {
                    Payload::Prepare { view, seq, value } | Payload::Commit { view, seq, value } => {
                        attested.insert((from, *view, *seq, value.clone()));
                    }
                    Payload::NewView {
                        view, seq, selected, ..
                    } => {
                        attested.insert((from, *view, *seq, selected.clone()));
                    }
                    Payload::ViewChange(r) => {
                        reported.insert((from, r.clone()));
                    }
                }
                sends.insert(id, (from, payload));
            }
            RecordKind::Deliver => {
                let Some(id) = rec.id else { continue };
                match sends.get(&id) {
                    None => problems.push(format!(
                        "step {}: message {id} delivered but never sent",
                        rec.step
                    )),
                    Some((from, payload)) => {
                        if rec.from != Some(*from) {
                            problems.push(format!(
                                "step {}: message {id} sent by {from} delivered as from {:?}",
                                rec.step, rec.from
                            ));
                        }
                        if rec.payload.as_ref().is_some_and(|p| p != payload) {
                            problems.push(format!("step {}: message {id} altered in flight", rec.step));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    problems
}

/// Direct count: selection by commit certificate, then `f+1` votes, then
/// NULL; ties to the smallest label.
pub fn hbft_select_oracle(votes: &[Option<&str>], certified: Option<&str>, f: usize) -> Value {
    if let Some(v) = certified {
        return Value::new(v);
    }
    let mut labels: Vec<&str> = votes.iter().flatten().copied().collect();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .find(|l| votes.iter().filter(|v| **v == Some(*l)).count() > f)
        .map_or(Value::NULL, Value::new)
}

/// Direct count: no value other than `m` appears `2f+1` times.
pub fn fab_vouch_oracle(votes: &[Option<&str>], m: &str, f: usize) -> bool {
    ["a", "b", "c"]
        .iter()
        .filter(|l| **l != m)
        .all(|l| votes.iter().filter(|v| **v == Some(*l)).count() < 2 * f + 1)
}

/// Every multiset of `size` votes over {a, b, empty}, as sorted lists.
pub fn multisets(size: usize) -> Vec<Vec<Option<&'static str>>> {
    let symbols = [Some("a"), Some("b"), None];
    let mut out = Vec::new();
    for na in 0..=size {
        for nb in 0..=size - na {
            let ne = size - na - nb;
            let mut m = Vec::new();
            m.extend(std::iter::repeat_n(symbols[0], na));
            m.extend(std::iter::repeat_n(symbols[1], nb));
            m.extend(std::iter::repeat_n(symbols[2], ne));
            out.push(m);
        }
    }
    out
}
