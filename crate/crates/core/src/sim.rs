//! Deterministic discrete-event driver: replicas, the network, logical time
//! and the trace.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary::{apply_script, AdversaryEvent, ByzantineScript};
use crate::fab::FabReplica;
use crate::hbft::HbftReplica;
use crate::message::{CommitEvent, Message, Payload};
use crate::net::{MessageId, Network, Pending, SimError};
use crate::replica::{Dest, Effects, Replica, StateDigest};
use crate::types::{Config, Protocol, ReplicaId, SeqNum, Value, View};

pub const DEFAULT_STEP_LIMIT: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Send,
    Deliver,
    Timeout,
    Adversary,
    Commit,
    Reject,
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<MessageId>,
    pub from: Option<ReplicaId>,
    pub to: Option<ReplicaId>,
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit: Option<CommitEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub replica_state_digest: Option<StateDigest>,
}

impl TraceRecord {
    fn new(step: u64, kind: RecordKind) -> Self {
        TraceRecord {
            step,
            kind,
            id: None,
            from: None,
            to: None,
            payload: None,
            commit: None,
            detail: None,
            replica_state_digest: None,
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {:>3}  ", self.step)?;
        let who = |r: Option<ReplicaId>| r.map_or_else(|| "?".to_string(), |r| r.to_string());
        match self.kind {
            RecordKind::Send => write!(
                f,
                "{} -> {}  {}",
                who(self.from),
                who(self.to),
                self.payload.as_ref().map(|p| p.to_string()).unwrap_or_default()
            )?,
            RecordKind::Deliver => write!(
                f,
                "{} receives {} from {}",
                who(self.to),
                self.payload.as_ref().map(|p| p.to_string()).unwrap_or_default(),
                who(self.from)
            )?,
            RecordKind::Timeout => write!(f, "{} times out", who(self.to))?,
            RecordKind::Adversary => write!(f, "{} (Byzantine) acts", who(self.from))?,
            RecordKind::Commit => {
                if let Some(c) = &self.commit {
                    write!(
                        f,
                        "*** {} COMMITS {} at {} in {}",
                        c.replica, c.value, c.seq, c.view
                    )?
                }
            }
            RecordKind::Reject => write!(f, "send from {} refused", who(self.from))?,
        }
        if let Some(d) = &self.detail {
            write!(f, "  [{d}]")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub steps: u64,
    /// Messages to correct replicas were still in flight when the run ended.
    pub incomplete_delivery: bool,
    pub step_limit_exceeded: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn commit_events(&self) -> impl Iterator<Item = &CommitEvent> {
        self.records.iter().filter_map(|r| r.commit.as_ref())
    }

    /// One JSON object per line, in record order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)?;
            if v.get("kind").is_some() {
                records.push(serde_json::from_value(v)?);
            }
        }
        let steps = records.last().map_or(0, |r: &TraceRecord| r.step);
        Ok(Trace {
            records,
            meta: TraceMeta {
                steps,
                ..TraceMeta::default()
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Correct(Replica),
    Byzantine {
        script: ByzantineScript,
        fired: BTreeSet<usize>,
    },
}

/// Runtime knobs that are not part of the protocol.
#[derive(Clone, Debug)]
pub struct SimOptions {
    pub step_limit: u64,
    pub record_trace: bool,
    /// When false, messages addressed to Byzantine replicas are dropped at
    /// send time. Useful when Byzantine behaviour does not depend on input.
    pub deliver_to_byzantine: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            step_limit: DEFAULT_STEP_LIMIT,
            record_trace: true,
            deliver_to_byzantine: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    config: Config,
    seq: SeqNum,
    nodes: Vec<Node>,
    net: Network,
    clock: u64,
    options: SimOptions,
    records: Vec<TraceRecord>,
    commits: Vec<CommitEvent>,
    proposals: BTreeSet<(SeqNum, Value)>,
    step_limit_exceeded: bool,
}

impl Simulation {
    /// A cluster where every Byzantine replica is silent until given a
    /// script. `fresh` lists the values a correct primary proposes in a view
    /// when nothing constrains it.
    pub fn new(config: Config, seq: SeqNum, fresh: &[(View, Value)], options: SimOptions) -> Self {
        let nodes = config
            .replicas()
            .map(|r| {
                if config.is_byzantine(r) {
                    Node::Byzantine {
                        script: ByzantineScript::silent(r),
                        fired: BTreeSet::new(),
                    }
                } else {
                    Node::Correct(match config.protocol() {
                        Protocol::Hbft => Replica::Hbft(HbftReplica::new(r)),
                        Protocol::Fab => {
                            Replica::Fab(FabReplica::new(r, seq).with_fresh_values(fresh.iter().cloned()))
                        }
                    })
                }
            })
            .collect();
        Simulation {
            config,
            seq,
            nodes,
            net: Network::new(),
            clock: 0,
            options,
            records: Vec::new(),
            commits: Vec::new(),
            proposals: BTreeSet::new(),
            step_limit_exceeded: false,
        }
    }

    pub fn set_script(&mut self, script: ByzantineScript) {
        let idx = script.replica.index();
        if let Some(Node::Byzantine { script: s, .. }) = self.nodes.get_mut(idx) {
            *s = script;
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn seq(&self) -> SeqNum {
        self.seq
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn replica(&self, r: ReplicaId) -> Option<&Replica> {
        match self.nodes.get(r.index()) {
            Some(Node::Correct(rep)) => Some(rep),
            _ => None,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn commits(&self) -> &[CommitEvent] {
        &self.commits
    }

    pub fn step_limit_exceeded(&self) -> bool {
        self.step_limit_exceeded
    }

    fn record(&mut self, rec: TraceRecord) {
        if self.options.record_trace {
            self.records.push(rec);
        }
    }

    /// Advances logical time by one event. False once the step limit is hit.
    fn tick(&mut self) -> bool {
        if self.clock >= self.options.step_limit {
            self.step_limit_exceeded = true;
            return false;
        }
        self.clock += 1;
        true
    }

    /// Sends `message` from `from` to `to`. The claimed sender must be `from`.
    pub fn send(
        &mut self,
        from: ReplicaId,
        to: ReplicaId,
        message: Message,
    ) -> Result<Option<MessageId>, SimError> {
        let payload = message.payload.clone();
        let id = self.net.send(&self.config, from, to, message, self.clock)?;
        self.note_proposal(from, &payload);
        if !self.options.deliver_to_byzantine && self.config.is_byzantine(to) {
            self.net.discard(id);
            return Ok(None);
        }
        if self.options.record_trace {
            let mut rec = TraceRecord::new(self.clock, RecordKind::Send);
            rec.id = Some(id);
            rec.from = Some(from);
            rec.to = Some(to);
            rec.payload = Some(payload);
            self.records.push(rec);
        }
        Ok(Some(id))
    }

    /// Sends to every replica other than `from`, in id order.
    pub fn broadcast(&mut self, from: ReplicaId, message: Message) -> Result<Vec<MessageId>, SimError> {
        let mut ids = Vec::new();
        for to in self.config.replicas().filter(|r| *r != from).collect::<Vec<_>>() {
            ids.extend(self.send(from, to, message.clone())?);
        }
        Ok(ids)
    }

    /// Sends that a script or the driver attempts may be refused; the refusal
    /// is recorded instead of aborting the run.
    fn try_send(&mut self, from: ReplicaId, to: ReplicaId, message: Message) {
        if let Err(e) = self.send(from, to, message.clone()) {
            let mut rec = TraceRecord::new(self.clock, RecordKind::Reject);
            rec.from = Some(from);
            rec.to = Some(to);
            rec.payload = Some(message.payload);
            rec.detail = Some(e.to_string());
            self.record(rec);
        }
    }

    fn apply_effects(&mut self, at: ReplicaId, fx: Effects) -> Result<(), SimError> {
        for out in fx.outbound {
            let message = Message {
                sender: at,
                payload: out.payload,
            };
            match out.dest {
                Dest::Others => {
                    self.broadcast(at, message)?;
                }
                Dest::To(to) => {
                    self.send(at, to, message)?;
                }
            }
        }
        if let Some(c) = fx.commit {
            let ev = CommitEvent {
                replica: at,
                view: c.view,
                seq: c.seq,
                value: c.value,
                sim_step: self.clock,
            };
            let mut rec = TraceRecord::new(self.clock, RecordKind::Commit);
            rec.from = Some(at);
            rec.commit = Some(ev.clone());
            self.record(rec);
            self.commits.push(ev);
        }
        Ok(())
    }

    fn notes(fx: &Effects) -> Option<String> {
        (!fx.notes.is_empty()).then(|| {
            fx.notes
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        })
    }

    /// Fires `Start` triggers and has each correct primary of the initial
    /// view propose `proposal`, if given.
    pub fn start(&mut self, proposal: Option<Value>) -> Result<(), SimError> {
        for idx in 0..self.nodes.len() {
            let r = ReplicaId(idx as u16);
            match &mut self.nodes[idx] {
                Node::Byzantine { script, fired } => {
                    if let Some((i, sends)) = apply_script(script, fired, AdversaryEvent::Start) {
                        fired.insert(i);
                        let id = script.actions[i].id.clone();
                        self.adversary_record(r, &id);
                        for s in sends {
                            self.try_send(r, s.to, s.message);
                        }
                    }
                }
                Node::Correct(rep) => {
                    let Some(value) = proposal.clone() else { continue };
                    if crate::types::primary_of(rep.view(), &self.config) != r {
                        continue;
                    }
                    let fx = rep.propose(&self.config, self.seq, value);
                    self.apply_effects(r, fx)?;
                }
            }
        }
        Ok(())
    }

    fn adversary_record(&mut self, r: ReplicaId, action: &str) {
        let mut rec = TraceRecord::new(self.clock, RecordKind::Adversary);
        rec.from = Some(r);
        rec.detail = Some(format!("script action {action:?}"));
        self.record(rec);
    }

    /// Delivers message `id` now, held or not. Returns false if the step
    /// limit stopped delivery.
    pub fn deliver(&mut self, id: MessageId) -> Result<bool, SimError> {
        self.net.get(id).ok_or(SimError::UnknownMessage(id))?;
        if !self.tick() {
            return Ok(false);
        }
        let Pending { to, message, .. } = self.net.take(id)?;
        self.dispatch(Some(id), to, message)?;
        Ok(true)
    }

    /// Hands `message` to `to` as if it had just arrived, without it having
    /// gone through the queue first. Used by the explorer to inject
    /// Byzantine traffic; the message is still authenticated.
    pub fn inject(&mut self, to: ReplicaId, message: Message) -> Result<bool, SimError> {
        if !self.tick() {
            return Ok(false);
        }
        let from = message.sender;
        let id = self.net.send(&self.config, from, to, message, self.clock)?;
        let p = self.net.take(id)?;
        self.note_proposal(from, &p.message.payload);
        self.dispatch(Some(id), p.to, p.message)?;
        Ok(true)
    }

    fn dispatch(&mut self, id: Option<MessageId>, to: ReplicaId, message: Message) -> Result<(), SimError> {
        let from = message.sender;
        let mut rec = TraceRecord::new(self.clock, RecordKind::Deliver);
        rec.id = id;
        rec.from = Some(from);
        rec.to = Some(to);
        match &mut self.nodes[to.index()] {
            Node::Correct(rep) => {
                let fx = rep.on_message(&self.config, from, &message.payload);
                rec.detail = Self::notes(&fx);
                if self.options.record_trace {
                    rec.payload = Some(message.payload);
                    rec.replica_state_digest = Some(rep.digest(self.seq));
                    self.records.push(rec);
                }
                self.apply_effects(to, fx)?;
            }
            Node::Byzantine { script, fired } => {
                let hit = apply_script(
                    script,
                    fired,
                    AdversaryEvent::Receive {
                        from,
                        payload: &message.payload,
                    },
                );
                let action = hit.as_ref().map(|(i, _)| script.actions[*i].id.clone());
                if let Some((i, _)) = &hit {
                    fired.insert(*i);
                }
                rec.payload = Some(message.payload);
                self.record(rec);
                if let Some((_, sends)) = hit {
                    self.adversary_record(to, action.as_deref().unwrap_or_default());
                    for s in sends {
                        self.try_send(to, s.to, s.message);
                    }
                }
            }
        }
        Ok(())
    }

    /// Times out replica `at` in `view` for `seq`. Stale timeouts are no-ops;
    /// at a Byzantine replica only its script reacts.
    pub fn fire_timeout(&mut self, at: ReplicaId, view: View, seq: SeqNum) -> Result<bool, SimError> {
        if !self.config.is_valid_replica(at) {
            return Err(SimError::UnknownReplica(at.0));
        }
        if !self.tick() {
            return Ok(false);
        }
        let mut rec = TraceRecord::new(self.clock, RecordKind::Timeout);
        rec.to = Some(at);
        rec.detail = Some(format!("timeout in {view} for {seq}"));
        match &mut self.nodes[at.index()] {
            Node::Correct(rep) => {
                let fx = rep.on_timeout(&self.config, view, seq);
                if let Some(n) = Self::notes(&fx) {
                    rec.detail = Some(format!("timeout in {view} for {seq}; {n}"));
                }
                rec.replica_state_digest = Some(rep.digest(self.seq));
                self.record(rec);
                self.apply_effects(at, fx)?;
            }
            Node::Byzantine { script, fired } => {
                let hit = apply_script(script, fired, AdversaryEvent::Timeout { view, seq });
                let action = hit.as_ref().map(|(i, _)| script.actions[*i].id.clone());
                if let Some((i, _)) = &hit {
                    fired.insert(*i);
                }
                self.record(rec);
                if let Some((_, sends)) = hit {
                    self.adversary_record(at, action.as_deref().unwrap_or_default());
                    for s in sends {
                        self.try_send(at, s.to, s.message);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Runs a `manual` script action. Returns false if the replica has no
    /// such unfired action.
    pub fn adversary_action(&mut self, replica: ReplicaId, action: &str) -> Result<bool, SimError> {
        let Some(Node::Byzantine { script, fired }) = self.nodes.get_mut(replica.index()) else {
            return Ok(false);
        };
        let Some((i, sends)) = apply_script(script, fired, AdversaryEvent::Manual { action }) else {
            return Ok(false);
        };
        fired.insert(i);
        if !self.tick() {
            return Ok(true);
        }
        self.adversary_record(replica, action);
        for s in sends {
            self.try_send(replica, s.to, s.message);
        }
        Ok(true)
    }

    /// Delivers deliverable messages in (due, id) order until none remain or
    /// the step limit is reached.
    pub fn flush(&mut self) -> Result<(), SimError> {
        while let Some(p) = self.net.next_deliverable() {
            let id = p.id;
            if !self.deliver(id)? {
                break;
            }
        }
        Ok(())
    }

    pub fn into_trace(self) -> Trace {
        let incomplete_delivery = self.net.pending().any(|p| !self.config.is_byzantine(p.to));
        Trace {
            records: self.records,
            meta: TraceMeta {
                steps: self.clock,
                incomplete_delivery,
                step_limit_exceeded: self.step_limit_exceeded,
            },
        }
    }

    /// Every (seq, value) some view's primary has proposed so far.
    pub fn proposals(&self) -> &BTreeSet<(SeqNum, Value)> {
        &self.proposals
    }

    fn note_proposal(&mut self, from: ReplicaId, payload: &Payload) {
        let value = match payload {
            Payload::Prepare { value, .. } => value,
            Payload::NewView { selected, .. } => selected,
            _ => return,
        };
        if crate::types::primary_of(payload.view(), &self.config) == from
            && !self.proposals.contains(&(payload.seq(), value.clone()))
        {
            self.proposals.insert((payload.seq(), value.clone()));
        }
    }
}
