//! Wire payloads and certificates.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{Config, ReplicaId, SeqNum, Value, View};

/// A value a replica accepted, together with the view it was accepted in.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Accepted {
    pub view: View,
    pub value: Value,
}

impl Accepted {
    pub fn new(view: View, value: Value) -> Self {
        Accepted { view, value }
    }
}

/// `2f + 1` matching attestations for `(view, seq, value)`.
///
/// Attestations are kept as a list so that a duplicated signer is
/// representable and can be rejected by [`validate_commit_certificate`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommitCertificate {
    pub view: View,
    pub seq: SeqNum,
    pub value: Value,
    pub attestations: Vec<ReplicaId>,
}

/// True iff the certificate has at least `2f + 1` distinct in-range signers.
pub fn validate_commit_certificate(cc: &CommitCertificate, config: &Config) -> bool {
    let mut seen = BTreeSet::new();
    for r in &cc.attestations {
        if !config.is_valid_replica(*r) || !seen.insert(*r) {
            return false;
        }
    }
    let quorum = 2 * config.f() + 1;
    seen.len() >= quorum
}

/// Contents of a VIEW-CHANGE message. FaB reports never carry a commit
/// certificate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewChangeReport {
    pub new_view: View,
    pub seq: SeqNum,
    pub accepted: Option<Accepted>,
    pub commit_cert: Option<CommitCertificate>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignedReport {
    pub replica: ReplicaId,
    pub report: ViewChangeReport,
}

/// The view-change reports a new primary justifies its proposal with.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProgressCertificate {
    pub new_view: View,
    pub seq: SeqNum,
    pub reports: Vec<SignedReport>,
}

impl ProgressCertificate {
    /// Structural check shared by both protocols: reports target this
    /// certificate's view and slot, reporters are distinct cluster members,
    /// and there are at least `quorum` of them.
    pub fn is_well_formed(&self, quorum: usize, config: &Config) -> bool {
        let mut seen = BTreeSet::new();
        for r in &self.reports {
            if r.report.new_view != self.new_view
                || r.report.seq != self.seq
                || !config.is_valid_replica(r.replica)
                || !seen.insert(r.replica)
            {
                return false;
            }
        }
        seen.len() >= quorum
    }

    /// Accepted values in report order; `None` for an empty report.
    pub fn votes(&self) -> impl Iterator<Item = Option<&Value>> {
        self.reports
            .iter()
            .map(|r| r.report.accepted.as_ref().map(|a| &a.value))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Prepare {
        view: View,
        seq: SeqNum,
        value: Value,
    },
    Commit {
        view: View,
        seq: SeqNum,
        value: Value,
    },
    ViewChange(ViewChangeReport),
    NewView {
        view: View,
        seq: SeqNum,
        selected: Value,
        progress_cert: ProgressCertificate,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Prepare,
    Commit,
    ViewChange,
    NewView,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Prepare { .. } => PayloadKind::Prepare,
            Payload::Commit { .. } => PayloadKind::Commit,
            Payload::ViewChange(_) => PayloadKind::ViewChange,
            Payload::NewView { .. } => PayloadKind::NewView,
        }
    }

    /// The view a message belongs to; for VIEW-CHANGE, the view it asks for.
    pub fn view(&self) -> View {
        match self {
            Payload::Prepare { view, .. } | Payload::Commit { view, .. } | Payload::NewView { view, .. } => {
                *view
            }
            Payload::ViewChange(r) => r.new_view,
        }
    }

    pub fn seq(&self) -> SeqNum {
        match self {
            Payload::Prepare { seq, .. } | Payload::Commit { seq, .. } | Payload::NewView { seq, .. } => *seq,
            Payload::ViewChange(r) => r.seq,
        }
    }

    /// The value a message speaks for, if any.
    pub fn value(&self) -> Option<&Value> {
        match self {
            Payload::Prepare { value, .. } | Payload::Commit { value, .. } => Some(value),
            Payload::NewView { selected, .. } => Some(selected),
            Payload::ViewChange(r) => r.accepted.as_ref().map(|a| &a.value),
        }
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Prepare { view, seq, value } => write!(f, "PREPARE({view}, {seq}, {value})"),
            Payload::Commit { view, seq, value } => write!(f, "COMMIT({view}, {seq}, {value})"),
            Payload::ViewChange(r) => {
                write!(f, "VIEW-CHANGE(to {}, {}, ", r.new_view, r.seq)?;
                match &r.accepted {
                    Some(a) => write!(f, "accepted {} in {}", a.value, a.view)?,
                    None => f.write_str("nothing accepted")?,
                }
                if let Some(cc) = &r.commit_cert {
                    write!(f, ", commit cert for {}", cc.value)?;
                }
                f.write_str(")")
            }
            Payload::NewView {
                view,
                seq,
                selected,
                progress_cert,
            } => {
                write!(f, "NEW-VIEW({view}, {seq}, {selected}; cert {{")?;
                for (i, r) in progress_cert.reports.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    match &r.report.accepted {
                        Some(a) => write!(f, "{}:{}", r.replica, a.value)?,
                        None => write!(f, "{}:-", r.replica)?,
                    }
                    if r.report.commit_cert.is_some() {
                        f.write_str("+cc")?;
                    }
                }
                f.write_str("})")
            }
        }
    }
}

/// A payload together with the identity its author claims. The simulator
/// refuses to enqueue a message whose claimed sender is not the replica
/// actually sending it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Message {
    pub sender: ReplicaId,
    pub payload: Payload,
}

/// A commit observed at a correct replica.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommitEvent {
    pub replica: ReplicaId,
    pub view: View,
    pub seq: SeqNum,
    pub value: Value,
    pub sim_step: u64,
}
