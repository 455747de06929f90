//! Agreement and Validity verdicts over traces.
//!
//! The checker reads only commit events and primary proposals, so it judges
//! both protocols the same way. Agreement is checked across views: a commit
//! in view 1 and a different commit for the same slot in view 2 conflict.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::message::{CommitEvent, Payload};
use crate::sim::{RecordKind, Trace, TraceMeta};
use crate::types::{primary_of, Config, SeqNum, Value};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Agreement {
    Holds,
    Violated { witness: [CommitEvent; 2] },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Validity {
    Holds,
    Violated { witness: CommitEvent },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub agreement: Agreement,
    pub validity: Validity,
    pub metadata: TraceMeta,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        self.agreement == Agreement::Holds && self.validity == Validity::Holds
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "verdict": self })).expect("verdict serializes")
    }
}

fn correct_commits<'a>(
    events: impl IntoIterator<Item = &'a CommitEvent>,
    config: &Config,
) -> Vec<&'a CommitEvent> {
    let mut v: Vec<_> = events
        .into_iter()
        .filter(|e| !config.is_byzantine(e.replica))
        .collect();
    v.sort_by_key(|e| (e.sim_step, e.replica));
    v
}

/// Agreement over a set of commit events: the witness is the first
/// conflicting pair ordered by (step, replica).
pub fn agreement_of<'a>(events: impl IntoIterator<Item = &'a CommitEvent>, config: &Config) -> Agreement {
    let events = correct_commits(events, config);
    for (i, e1) in events.iter().enumerate() {
        if let Some(e2) = events[i + 1..]
            .iter()
            .find(|e2| e2.seq == e1.seq && e2.value != e1.value)
        {
            return Agreement::Violated {
                witness: [(*e1).clone(), (*e2).clone()],
            };
        }
    }
    Agreement::Holds
}

/// Validity over commit events and the set of (seq, value) pairs some
/// view's primary proposed. NULL commits are exempt.
pub fn validity_of<'a>(
    events: impl IntoIterator<Item = &'a CommitEvent>,
    proposals: &BTreeSet<(SeqNum, Value)>,
    config: &Config,
) -> Validity {
    correct_commits(events, config)
        .into_iter()
        .find(|e| !e.value.is_null() && !proposals.contains(&(e.seq, e.value.clone())))
        .map_or(Validity::Holds, |e| Validity::Violated { witness: e.clone() })
}

/// Values sent by the primary of their view as PREPARE or NEW-VIEW.
pub fn proposals_in(trace: &Trace, config: &Config) -> BTreeSet<(SeqNum, Value)> {
    trace
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Send)
        .filter_map(|r| {
            let p = r.payload.as_ref()?;
            let value = match p {
                Payload::Prepare { value, .. } => value,
                Payload::NewView { selected, .. } => selected,
                _ => return None,
            };
            (r.from == Some(primary_of(p.view(), config))).then(|| (p.seq(), value.clone()))
        })
        .collect()
}

pub fn check_agreement(trace: &Trace, config: &Config) -> Agreement {
    agreement_of(trace.commit_events(), config)
}

pub fn check_validity(trace: &Trace, config: &Config) -> Validity {
    validity_of(trace.commit_events(), &proposals_in(trace, config), config)
}

pub fn check(trace: &Trace, config: &Config) -> Verdict {
    Verdict {
        agreement: check_agreement(trace, config),
        validity: check_validity(trace, config),
        metadata: trace.meta.clone(),
    }
}
