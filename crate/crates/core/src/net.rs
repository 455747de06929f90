//! Authenticated, reliable, asynchronous point-to-point channels.
//!
//! Nothing is ever lost, but delivery order is entirely up to whoever drives
//! the simulation. Sender attribution is enforced here: a message whose
//! claimed author is not the sending replica is refused, and so is any
//! certificate that names a signer who never sent the statement it vouches
//! for.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Message, Payload, PayloadKind, ViewChangeReport};
use crate::types::{Config, ReplicaId, SeqNum, Value, View};

pub type MessageId = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("{from} tried to send a message claiming to be from {claimed}")]
    ForgedSender { from: ReplicaId, claimed: ReplicaId },
    #[error("{from} embedded a statement attributed to {signer} that {signer} never sent")]
    ForgedStatement { from: ReplicaId, signer: ReplicaId },
    #[error("replica {0} is outside the cluster")]
    UnknownReplica(u16),
    #[error("no message with id {0}")]
    UnknownMessage(MessageId),
    #[error("message {0} was already delivered")]
    AlreadyDelivered(MessageId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pending {
    pub id: MessageId,
    pub to: ReplicaId,
    pub message: Message,
    /// Earliest logical step at which the message may be delivered.
    pub due: u64,
    pub held: bool,
}

/// Matches in-flight messages. Unset fields and empty lists match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<MessageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PayloadKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub from: Vec<ReplicaId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub to: Vec<ReplicaId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<View>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
}

impl Selector {
    pub fn any() -> Self {
        Selector::default()
    }

    pub fn matches(&self, p: &Pending) -> bool {
        self.id.is_none_or(|id| id == p.id)
            && self.kind.is_none_or(|k| k == p.message.payload.kind())
            && (self.from.is_empty() || self.from.contains(&p.message.sender))
            && (self.to.is_empty() || self.to.contains(&p.to))
            && self.view.is_none_or(|v| v == p.message.payload.view())
            && self
                .value
                .as_ref()
                .is_none_or(|v| p.message.payload.value() == Some(v))
    }
}

/// Signed statements seen so far, used to check embedded certificates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Registry {
    attestations: BTreeSet<(ReplicaId, View, SeqNum, Value)>,
    reports: BTreeSet<(ReplicaId, ViewChangeReport)>,
}

impl Registry {
    fn record(&mut self, sender: ReplicaId, payload: &Payload) {
        match payload {
            Payload::Prepare { view, seq, value } | Payload::Commit { view, seq, value } => {
                self.attestations.insert((sender, *view, *seq, value.clone()));
            }
            Payload::NewView {
                view, seq, selected, ..
            } => {
                self.attestations.insert((sender, *view, *seq, selected.clone()));
            }
            Payload::ViewChange(r) => {
                self.reports.insert((sender, r.clone()));
            }
        }
    }

    /// First signer whose statement inside `payload` is unaccounted for.
    /// A sender may always vouch for itself.
    fn unbacked_signer(&self, sender: ReplicaId, payload: &Payload) -> Option<ReplicaId> {
        let report_ok = |signer: ReplicaId, r: &ViewChangeReport| {
            signer == sender || self.reports.contains(&(signer, r.clone()))
        };
        let cc_ok = |r: &ViewChangeReport| -> Option<ReplicaId> {
            let cc = r.commit_cert.as_ref()?;
            cc.attestations.iter().copied().find(|a| {
                *a != sender
                    && !self
                        .attestations
                        .contains(&(*a, cc.view, cc.seq, cc.value.clone()))
            })
        };
        match payload {
            Payload::Prepare { .. } | Payload::Commit { .. } => None,
            Payload::ViewChange(r) => cc_ok(r),
            // a report its signer already sent was checked then, commit
            // certificate included
            Payload::NewView { progress_cert, .. } => progress_cert.reports.iter().find_map(|sr| {
                if sr.replica == sender {
                    cc_ok(&sr.report)
                } else if !report_ok(sr.replica, &sr.report) {
                    Some(sr.replica)
                } else {
                    None
                }
            }),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    next_id: MessageId,
    pending: BTreeMap<MessageId, Pending>,
    delivered: BTreeSet<MessageId>,
    holds: Vec<Selector>,
    registry: Registry,
}

impl Network {
    pub fn new() -> Self {
        Network::default()
    }

    /// Enqueues `message` from `from` to `to`, due at step `now`.
    pub fn send(
        &mut self,
        config: &Config,
        from: ReplicaId,
        to: ReplicaId,
        message: Message,
        now: u64,
    ) -> Result<MessageId, SimError> {
        for r in [from, to] {
            if !config.is_valid_replica(r) {
                return Err(SimError::UnknownReplica(r.0));
            }
        }
        if message.sender != from {
            return Err(SimError::ForgedSender {
                from,
                claimed: message.sender,
            });
        }
        if let Some(signer) = self.registry.unbacked_signer(from, &message.payload) {
            return Err(SimError::ForgedStatement { from, signer });
        }
        self.registry.record(from, &message.payload);

        let id = self.next_id;
        self.next_id += 1;
        let mut p = Pending {
            id,
            to,
            message,
            due: now,
            held: false,
        };
        p.held = self.holds.iter().any(|s| s.matches(&p));
        self.pending.insert(id, p);
        Ok(id)
    }

    fn pending_mut(&mut self, id: MessageId) -> Result<&mut Pending, SimError> {
        if self.delivered.contains(&id) {
            return Err(SimError::AlreadyDelivered(id));
        }
        self.pending.get_mut(&id).ok_or(SimError::UnknownMessage(id))
    }

    pub fn schedule_delivery(&mut self, id: MessageId, at_step: u64) -> Result<(), SimError> {
        let p = self.pending_mut(id)?;
        p.due = at_step;
        p.held = false;
        Ok(())
    }

    pub fn hold(&mut self, id: MessageId) -> Result<(), SimError> {
        self.pending_mut(id)?.held = true;
        Ok(())
    }

    /// Makes a held message deliverable from step `now` on.
    pub fn release(&mut self, id: MessageId, now: u64) -> Result<(), SimError> {
        let p = self.pending_mut(id)?;
        p.held = false;
        p.due = p.due.max(now);
        Ok(())
    }

    /// Holds every matching in-flight message and every future one until a
    /// release with an equal selector.
    pub fn hold_matching(&mut self, selector: Selector) -> usize {
        let mut n = 0;
        for p in self.pending.values_mut().filter(|p| selector.matches(p)) {
            p.held = true;
            n += 1;
        }
        self.holds.push(selector);
        n
    }

    pub fn release_matching(&mut self, selector: &Selector, now: u64) -> usize {
        self.holds.retain(|s| s != selector);
        let mut n = 0;
        for p in self
            .pending
            .values_mut()
            .filter(|p| p.held && selector.matches(p))
        {
            p.held = false;
            p.due = p.due.max(now);
            n += 1;
        }
        n
    }

    /// Removes a message for delivery, whether or not it is held.
    pub fn take(&mut self, id: MessageId) -> Result<Pending, SimError> {
        self.pending_mut(id)?;
        self.delivered.insert(id);
        Ok(self.pending.remove(&id).expect("checked above"))
    }

    /// Drops a message without delivering it.
    pub fn discard(&mut self, id: MessageId) -> Option<Pending> {
        self.pending.remove(&id)
    }

    /// The next message to deliver in (due, id) order, skipping held ones.
    pub fn next_deliverable(&self) -> Option<&Pending> {
        self.pending
            .values()
            .filter(|p| !p.held)
            .min_by_key(|p| (p.due, p.id))
    }

    pub fn pending(&self) -> impl Iterator<Item = &Pending> {
        self.pending.values()
    }

    pub fn get(&self, id: MessageId) -> Option<&Pending> {
        self.pending.get(&id)
    }

    pub fn select(&self, selector: &Selector) -> Vec<MessageId> {
        self.pending
            .values()
            .filter(|p| selector.matches(p))
            .map(|p| p.id)
            .collect()
    }
}
