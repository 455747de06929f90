//! Pieces shared by the hBFT and FaB state machines: what a handler returns,
//! replica modes, and the state digest written to traces.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fab::FabReplica;
use crate::hbft::HbftReplica;
use crate::message::{Accepted, CommitCertificate, Payload};
use crate::types::{Config, ReplicaId, SeqNum, Value, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    InView,
    ViewChanging { target: View },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dest {
    /// Every replica except the sender, in id order.
    Others,
    To(ReplicaId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub dest: Dest,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalCommit {
    pub view: View,
    pub seq: SeqNum,
    pub value: Value,
    /// Present for hBFT, where the certificate travels in VIEW-CHANGE.
    pub cert: Option<CommitCertificate>,
}

/// Why a handler ignored or refused its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Note {
    NotFromPrimary,
    StaleView,
    FutureView,
    LeftView,
    ConflictingPrepare,
    InvalidCertificate,
    SelectionMismatch,
    NotNewPrimary,
    OtherSlot,
    ConflictingCommits,
}

impl fmt::Display for Note {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Note::NotFromPrimary => "ignored: sender is not the primary of that view",
            Note::StaleView => "ignored: stale view",
            Note::FutureView => "dropped: message for a future view",
            Note::LeftView => "ignored: replica already left this view",
            Note::ConflictingPrepare => "ignored: another value already accepted",
            Note::InvalidCertificate => "rejected: invalid progress certificate",
            Note::SelectionMismatch => "rejected: proposal does not match certificate",
            Note::NotNewPrimary => "ignored: report sent to a replica that is not the new primary",
            Note::OtherSlot => "ignored: different sequence number",
            Note::ConflictingCommits => "f+1 COMMITs for a different value: starting view change",
        })
    }
}

/// Everything a handler asks the simulator to do.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Effects {
    pub outbound: Vec<Outbound>,
    pub commit: Option<LocalCommit>,
    pub notes: Vec<Note>,
}

impl Effects {
    pub fn note(note: Note) -> Self {
        Effects {
            notes: vec![note],
            ..Effects::default()
        }
    }

    pub fn broadcast(&mut self, payload: Payload) {
        self.outbound.push(Outbound {
            dest: Dest::Others,
            payload,
        });
    }

    pub fn send(&mut self, to: ReplicaId, payload: Payload) {
        self.outbound.push(Outbound {
            dest: Dest::To(to),
            payload,
        });
    }

    pub fn merge(&mut self, other: Effects) {
        self.outbound.extend(other.outbound);
        if other.commit.is_some() {
            self.commit = other.commit;
        }
        self.notes.extend(other.notes);
    }

    /// True if nothing observable happened.
    pub fn is_quiet(&self) -> bool {
        self.outbound.is_empty() && self.commit.is_none()
    }
}

/// Per-slot summary of a replica, embedded in trace records.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateDigest {
    pub replica: ReplicaId,
    pub seq: SeqNum,
    pub view: View,
    pub mode: Mode,
    pub accepted: Option<Accepted>,
    pub committed: Option<Accepted>,
}

/// A correct replica running one of the two protocols.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Replica {
    Hbft(HbftReplica),
    Fab(FabReplica),
}

impl Replica {
    pub fn id(&self) -> ReplicaId {
        match self {
            Replica::Hbft(r) => r.id(),
            Replica::Fab(r) => r.id(),
        }
    }

    pub fn view(&self) -> View {
        match self {
            Replica::Hbft(r) => r.view(),
            Replica::Fab(r) => r.view(),
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Replica::Hbft(r) => r.mode(),
            Replica::Fab(r) => r.mode(),
        }
    }

    pub fn propose(&mut self, config: &Config, seq: SeqNum, value: Value) -> Effects {
        match self {
            Replica::Hbft(r) => r.propose(config, seq, value),
            Replica::Fab(r) => r.propose(config, seq, value),
        }
    }

    pub fn on_message(&mut self, config: &Config, from: ReplicaId, payload: &Payload) -> Effects {
        match self {
            Replica::Hbft(r) => r.on_message(config, from, payload),
            Replica::Fab(r) => r.on_message(config, from, payload),
        }
    }

    pub fn on_timeout(&mut self, config: &Config, view: View, seq: SeqNum) -> Effects {
        match self {
            Replica::Hbft(r) => r.on_timeout(config, view, seq),
            Replica::Fab(r) => r.on_timeout(config, view, seq),
        }
    }

    /// Lower bound on the events this replica must still handle before it
    /// can commit `value` at `seq` in a view no later than `max_view`.
    /// `None` if it already committed.
    pub fn steps_to_commit(
        &self,
        config: &Config,
        seq: SeqNum,
        value: &Value,
        max_view: View,
    ) -> Option<usize> {
        match self {
            Replica::Hbft(r) => r.steps_to_commit(config, seq, value, max_view),
            Replica::Fab(r) => r.steps_to_commit(config, seq, value, max_view),
        }
    }

    pub fn digest(&self, seq: SeqNum) -> StateDigest {
        match self {
            Replica::Hbft(r) => r.digest(seq),
            Replica::Fab(r) => r.digest(seq),
        }
    }
}
