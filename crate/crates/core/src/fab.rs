//! FaB Paxos common case and view change, with proposer, acceptor and
//! learner roles folded into primary and backups.

use std::collections::{BTreeMap, BTreeSet};

use crate::hbft::SelectError;
use crate::message::{Accepted, Payload, ProgressCertificate, SignedReport, ViewChangeReport};
use crate::replica::{Effects, LocalCommit, Mode, Note, StateDigest};
use crate::types::{primary_of, Config, ReplicaId, SeqNum, Value, View};

fn vote_counts(cert: &ProgressCertificate) -> BTreeMap<&Value, usize> {
    let mut counts = BTreeMap::new();
    for v in cert.votes().flatten() {
        *counts.entry(v).or_default() += 1;
    }
    counts
}

/// A progress certificate vouches for `m` when no other value appears at
/// least `2f + 1` times in it.
pub fn fab_vouches(cert: &ProgressCertificate, m: &Value, config: &Config) -> Result<bool, SelectError> {
    let needed = config.progress_quorum();
    if !cert.is_well_formed(needed, config) {
        return Err(SelectError::InvalidCertificate { needed });
    }
    let blocking = 2 * config.f() + 1;
    Ok(vote_counts(cert).into_iter().all(|(v, n)| v == m || n < blocking))
}

/// What a new primary proposes: the vouched value with the most reports
/// (smallest on ties), or `fresh` when no report names a value.
pub fn fab_select_proposal(
    cert: &ProgressCertificate,
    config: &Config,
    fresh: Option<&Value>,
) -> Result<Value, SelectError> {
    let counts = vote_counts(cert);
    let mut best: Option<(&Value, usize)> = None;
    for (v, n) in &counts {
        if !fab_vouches(cert, v, config)? {
            continue;
        }
        if best.is_none_or(|(_, bn)| *n > bn) {
            best = Some((v, *n));
        }
    }
    if counts.is_empty() {
        // still surface a malformed certificate
        fab_vouches(cert, &Value::NULL, config)?;
    }
    Ok(best
        .map(|(v, _)| v.clone())
        .or_else(|| fresh.cloned())
        .unwrap_or(Value::NULL))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FabReplica {
    id: ReplicaId,
    seq: SeqNum,
    view: View,
    mode: Mode,
    accepted: Option<Accepted>,
    commit_log: BTreeMap<(View, Value), BTreeSet<ReplicaId>>,
    committed: Option<Accepted>,
    reports: BTreeMap<View, BTreeMap<ReplicaId, ViewChangeReport>>,
    nv_sent: BTreeSet<View>,
    /// Values this replica proposes when it is primary and nothing binds it.
    fresh: BTreeMap<View, Value>,
    last_proposal: Option<Accepted>,
}

impl FabReplica {
    pub fn new(id: ReplicaId, seq: SeqNum) -> Self {
        FabReplica {
            id,
            seq,
            view: View::INITIAL,
            mode: Mode::InView,
            accepted: None,
            commit_log: BTreeMap::new(),
            committed: None,
            reports: BTreeMap::new(),
            nv_sent: BTreeSet::new(),
            fresh: BTreeMap::new(),
            last_proposal: None,
        }
    }

    pub fn with_fresh_values(mut self, fresh: impl IntoIterator<Item = (View, Value)>) -> Self {
        self.fresh.extend(fresh);
        self
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn accepted(&self) -> Option<&Accepted> {
        self.accepted.as_ref()
    }

    pub fn committed(&self) -> Option<&Accepted> {
        self.committed.as_ref()
    }

    /// The value this replica last proposed as a new primary, if any.
    pub fn last_proposal(&self) -> Option<&Accepted> {
        self.last_proposal.as_ref()
    }

    pub fn digest(&self, seq: SeqNum) -> StateDigest {
        let own = seq == self.seq;
        StateDigest {
            replica: self.id,
            seq,
            view: self.view,
            mode: self.mode,
            accepted: self.accepted.clone().filter(|_| own),
            committed: self.committed.clone().filter(|_| own),
        }
    }

    /// Lower bound on the events this replica must still handle before it
    /// can commit `value` in some view up to `max_view`. Only accepting a
    /// value adds two attestations at once.
    pub fn steps_to_commit(
        &self,
        config: &Config,
        seq: SeqNum,
        value: &Value,
        max_view: View,
    ) -> Option<usize> {
        if seq != self.seq || self.committed.is_some() {
            return None;
        }
        let q = config.commit_quorum();
        let mut best: Option<usize> = None;
        for w in (self.view.0..=max_view.0).map(View) {
            let lb = if w == self.view {
                if self.mode != Mode::InView {
                    continue;
                }
                let log = self.commit_log.get(&(w, value.clone()));
                let need = q.saturating_sub(log.map_or(0, BTreeSet::len)).max(1);
                let can_accept = self.accepted.as_ref().is_none_or(|a| a.view < w);
                if can_accept && !log.is_some_and(|l| l.contains(&self.id)) {
                    need.saturating_sub(1).max(1)
                } else {
                    need
                }
            } else {
                q.saturating_sub(1).max(1)
            };
            best = Some(best.map_or(lb, |b| b.min(lb)));
        }
        best
    }

    pub fn propose(&mut self, config: &Config, seq: SeqNum, value: Value) -> Effects {
        if primary_of(self.view, config) != self.id || self.mode != Mode::InView {
            return Effects::note(Note::NotFromPrimary);
        }
        if seq != self.seq {
            return Effects::note(Note::OtherSlot);
        }
        if self.accepted.is_some() {
            return Effects::note(Note::ConflictingPrepare);
        }
        let view = self.view;
        self.accept(view, value.clone(), &[self.id]);
        let mut fx = Effects::default();
        fx.broadcast(Payload::Prepare { view, seq, value });
        fx.merge(self.try_commit(config));
        fx
    }

    pub fn on_message(&mut self, config: &Config, from: ReplicaId, payload: &Payload) -> Effects {
        if payload.seq() != self.seq {
            return Effects::note(Note::OtherSlot);
        }
        match payload {
            Payload::Prepare { view, value, .. } => self.on_prepare(config, from, *view, value),
            Payload::Commit { view, value, .. } => self.on_commit(config, from, *view, value),
            Payload::ViewChange(report) => self.on_viewchange(config, from, report),
            Payload::NewView {
                view,
                selected,
                progress_cert,
                ..
            } => self.on_newview(config, from, *view, selected, progress_cert),
        }
    }

    pub fn on_prepare(&mut self, config: &Config, from: ReplicaId, view: View, value: &Value) -> Effects {
        if from != primary_of(view, config) {
            return Effects::note(Note::NotFromPrimary);
        }
        if let Some(n) = self.outside_current_view(view) {
            return Effects::note(n);
        }
        match &self.accepted {
            Some(a) if a.view == view && &a.value == value => return Effects::default(),
            Some(_) => return Effects::note(Note::ConflictingPrepare),
            None => {}
        }
        self.accept(view, value.clone(), &[from, self.id]);
        let mut fx = Effects::default();
        fx.broadcast(Payload::Commit {
            view,
            seq: self.seq,
            value: value.clone(),
        });
        fx.merge(self.try_commit(config));
        fx
    }

    /// Learners commit on `N - f` matching COMMITs whether or not they
    /// accepted the value themselves.
    pub fn on_commit(&mut self, config: &Config, from: ReplicaId, view: View, value: &Value) -> Effects {
        if let Some(n) = self.outside_current_view(view) {
            return Effects::note(n);
        }
        if !self
            .commit_log
            .entry((view, value.clone()))
            .or_default()
            .insert(from)
        {
            return Effects::default();
        }
        self.try_commit(config)
    }

    pub fn on_timeout(&mut self, config: &Config, view: View, seq: SeqNum) -> Effects {
        if seq != self.seq {
            return Effects::note(Note::OtherSlot);
        }
        if view != self.view || self.mode != Mode::InView {
            return Effects::note(Note::StaleView);
        }
        let target = view.next();
        self.mode = Mode::ViewChanging { target };
        let report = ViewChangeReport {
            new_view: target,
            seq,
            accepted: self.accepted.clone(),
            commit_cert: None,
        };
        let next_primary = primary_of(target, config);
        if next_primary == self.id {
            self.reports.entry(target).or_default().insert(self.id, report);
            return self.maybe_new_view(config, target);
        }
        let mut fx = Effects::default();
        fx.send(next_primary, Payload::ViewChange(report));
        fx
    }

    pub fn on_viewchange(&mut self, config: &Config, from: ReplicaId, report: &ViewChangeReport) -> Effects {
        let target = report.new_view;
        if target <= self.view {
            return Effects::note(Note::StaleView);
        }
        if primary_of(target, config) != self.id {
            return Effects::note(Note::NotNewPrimary);
        }
        let reports = self.reports.entry(target).or_default();
        if reports.contains_key(&from) {
            return Effects::default();
        }
        reports.insert(from, report.clone());
        self.maybe_new_view(config, target)
    }

    pub fn on_newview(
        &mut self,
        config: &Config,
        from: ReplicaId,
        view: View,
        selected: &Value,
        cert: &ProgressCertificate,
    ) -> Effects {
        if from != primary_of(view, config) {
            return Effects::note(Note::NotFromPrimary);
        }
        if view <= self.view {
            return Effects::note(Note::StaleView);
        }
        if cert.new_view != view || cert.seq != self.seq {
            return Effects::note(Note::InvalidCertificate);
        }
        match fab_vouches(cert, selected, config) {
            Err(_) => return Effects::note(Note::InvalidCertificate),
            Ok(false) => return Effects::note(Note::SelectionMismatch),
            Ok(true) => {}
        }
        self.enter_view(view);
        self.accept(view, selected.clone(), &[from, self.id]);
        let mut fx = Effects::default();
        fx.broadcast(Payload::Commit {
            view,
            seq: self.seq,
            value: selected.clone(),
        });
        fx.merge(self.try_commit(config));
        fx
    }

    fn outside_current_view(&self, view: View) -> Option<Note> {
        if view > self.view {
            Some(Note::FutureView)
        } else if view < self.view {
            Some(Note::StaleView)
        } else if self.mode != Mode::InView {
            Some(Note::LeftView)
        } else {
            None
        }
    }

    fn maybe_new_view(&mut self, config: &Config, target: View) -> Effects {
        if self.nv_sent.contains(&target) {
            return Effects::default();
        }
        let Some(reports) = self.reports.get(&target) else {
            return Effects::default();
        };
        if reports.len() < config.progress_quorum() {
            return Effects::default();
        }
        let cert = ProgressCertificate {
            new_view: target,
            seq: self.seq,
            reports: reports
                .iter()
                .map(|(r, rep)| SignedReport {
                    replica: *r,
                    report: rep.clone(),
                })
                .collect(),
        };
        let Ok(selected) = fab_select_proposal(&cert, config, self.fresh.get(&target)) else {
            return Effects::note(Note::InvalidCertificate);
        };
        self.nv_sent.insert(target);
        self.enter_view(target);
        self.accept(target, selected.clone(), &[self.id]);
        self.last_proposal = Some(Accepted::new(target, selected.clone()));

        let mut fx = Effects::default();
        fx.broadcast(Payload::NewView {
            view: target,
            seq: self.seq,
            selected,
            progress_cert: cert,
        });
        fx.merge(self.try_commit(config));
        fx
    }

    fn enter_view(&mut self, view: View) {
        self.view = view;
        self.mode = Mode::InView;
        self.commit_log.retain(|(v, _), _| *v >= view);
        self.reports.retain(|v, _| *v > view);
    }

    fn accept(&mut self, view: View, value: Value, attesters: &[ReplicaId]) {
        self.accepted = Some(Accepted::new(view, value.clone()));
        self.commit_log
            .entry((view, value))
            .or_default()
            .extend(attesters.iter().copied());
    }

    fn try_commit(&mut self, config: &Config) -> Effects {
        if self.committed.is_some() {
            return Effects::default();
        }
        let quorum = config.commit_quorum();
        let Some(((view, value), _)) = self
            .commit_log
            .iter()
            .find(|((v, _), senders)| *v == self.view && senders.len() >= quorum)
        else {
            return Effects::default();
        };
        let (view, value) = (*view, value.clone());
        self.committed = Some(Accepted::new(view, value.clone()));
        Effects {
            commit: Some(LocalCommit {
                view,
                seq: self.seq,
                value,
                cert: None,
            }),
            ..Effects::default()
        }
    }
}
