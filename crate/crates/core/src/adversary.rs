//! Scripted Byzantine behaviour.
//!
//! A Byzantine replica keeps no protocol state. Each scripted action fires at
//! most once, on the first event matching its trigger, and emits a fixed list
//! of messages. Scripts may claim a different sender; the simulator rejects
//! such messages, which is how forgery attempts are exercised.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Message, Payload, PayloadKind};
use crate::types::{Config, ReplicaId, SeqNum, View};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "on", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// Fires once when the simulation starts.
    Start,
    /// Fires when the schedule times the replica out in `view` for `seq`.
    Timeout { view: View, seq: SeqNum },
    /// Fires on delivery of a matching message to the replica.
    Receive {
        kind: PayloadKind,
        view: View,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<ReplicaId>,
    },
    /// Fires only when the schedule names the action.
    Manual,
}

impl Trigger {
    fn overlaps(&self, other: &Trigger) -> bool {
        match (self, other) {
            (Trigger::Start, Trigger::Start) => true,
            (Trigger::Timeout { view: v1, seq: s1 }, Trigger::Timeout { view: v2, seq: s2 }) => {
                v1 == v2 && s1 == s2
            }
            (
                Trigger::Receive {
                    kind: k1,
                    view: v1,
                    from: f1,
                },
                Trigger::Receive {
                    kind: k2,
                    view: v2,
                    from: f2,
                },
            ) => k1 == k2 && v1 == v2 && (f1.is_none() || f2.is_none() || f1 == f2),
            _ => false,
        }
    }

    fn matches(&self, event: &AdversaryEvent<'_>) -> bool {
        match (self, event) {
            (Trigger::Start, AdversaryEvent::Start) => true,
            (Trigger::Timeout { view, seq }, AdversaryEvent::Timeout { view: v, seq: s }) => {
                view == v && seq == s
            }
            (Trigger::Receive { kind, view, from }, AdversaryEvent::Receive { from: f, payload }) => {
                payload.kind() == *kind && payload.view() == *view && from.is_none_or(|x| x == *f)
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emission {
    pub to: Vec<ReplicaId>,
    pub payload: Payload,
    /// Claimed author. Defaults to the scripted replica; anything else is a
    /// forgery attempt and is rejected when sent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender: Option<ReplicaId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptAction {
    pub id: String,
    pub trigger: Trigger,
    #[serde(default)]
    pub emit: Vec<Emission>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineScript {
    pub replica: ReplicaId,
    #[serde(default)]
    pub actions: Vec<ScriptAction>,
}

/// Something that happened to a Byzantine replica.
#[derive(Clone, Copy, Debug)]
pub enum AdversaryEvent<'a> {
    Start,
    Timeout { view: View, seq: SeqNum },
    Receive { from: ReplicaId, payload: &'a Payload },
    Manual { action: &'a str },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptedSend {
    pub to: ReplicaId,
    pub message: Message,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("script for {0} targets a replica that is not Byzantine")]
    NotByzantine(ReplicaId),
    #[error("replica {0} has more than one script")]
    DuplicateScript(ReplicaId),
    #[error("script for {replica}: action id {id:?} is used twice")]
    DuplicateAction { replica: ReplicaId, id: String },
    #[error("script for {replica}: actions {first:?} and {second:?} have overlapping triggers")]
    OverlappingTriggers {
        replica: ReplicaId,
        first: String,
        second: String,
    },
    #[error("script for {replica}: action {id:?} sends to unknown replica {to}")]
    UnknownRecipient { replica: ReplicaId, id: String, to: u16 },
}

impl ByzantineScript {
    pub fn silent(replica: ReplicaId) -> Self {
        ByzantineScript {
            replica,
            actions: Vec::new(),
        }
    }

    pub fn validate(&self, config: &Config) -> Result<(), ScriptError> {
        let replica = self.replica;
        if !config.is_byzantine(replica) {
            return Err(ScriptError::NotByzantine(replica));
        }
        let mut ids = BTreeSet::new();
        for (i, action) in self.actions.iter().enumerate() {
            if !ids.insert(action.id.as_str()) {
                return Err(ScriptError::DuplicateAction {
                    replica,
                    id: action.id.clone(),
                });
            }
            for e in &action.emit {
                if let Some(bad) = e.to.iter().find(|r| !config.is_valid_replica(**r)) {
                    return Err(ScriptError::UnknownRecipient {
                        replica,
                        id: action.id.clone(),
                        to: bad.0,
                    });
                }
            }
            if let Some(other) = self.actions[..i]
                .iter()
                .find(|o| o.trigger.overlaps(&action.trigger))
            {
                return Err(ScriptError::OverlappingTriggers {
                    replica,
                    first: other.id.clone(),
                    second: action.id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Index of the action `event` triggers and the messages it emits. Actions in
/// `fired` are skipped.
pub fn apply_script(
    script: &ByzantineScript,
    fired: &BTreeSet<usize>,
    event: AdversaryEvent<'_>,
) -> Option<(usize, Vec<ScriptedSend>)> {
    let (idx, action) = script.actions.iter().enumerate().find(|(i, a)| {
        !fired.contains(i)
            && match event {
                AdversaryEvent::Manual { action } => a.id == action,
                _ => a.trigger.matches(&event),
            }
    })?;
    let sends = action
        .emit
        .iter()
        .flat_map(|e| {
            e.to.iter().map(move |to| ScriptedSend {
                to: *to,
                message: Message {
                    sender: e.sender.unwrap_or(script.replica),
                    payload: e.payload.clone(),
                },
            })
        })
        .collect();
    Some((idx, sends))
}
