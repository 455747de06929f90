//! hBFT agreement and view-change sub-protocols, one replica at a time.
//!
//! The state machine follows the published rules as written, including the
//! new primary's value-selection rule. That rule lets a view change replace a
//! value already committed at a correct replica; the checker, not this
//! module, is what notices.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::message::{
    validate_commit_certificate, Accepted, CommitCertificate, Payload, ProgressCertificate, SignedReport,
    ViewChangeReport,
};
use crate::replica::{Effects, LocalCommit, Mode, Note, StateDigest};
use crate::types::{primary_of, Config, ReplicaId, SeqNum, Value, View};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectError {
    #[error("progress certificate is malformed or has fewer than {needed} distinct reports")]
    InvalidCertificate { needed: usize },
}

/// Value a new primary must propose given the view-change reports it holds.
///
/// A report carrying a valid commit certificate wins outright. Otherwise a
/// value accepted by at least `f + 1` reporters is chosen. Otherwise NULL.
/// Ties go to the smallest value.
pub fn hbft_select_value(cert: &ProgressCertificate, config: &Config) -> Result<Value, SelectError> {
    let needed = 2 * config.f() + 1;
    if !cert.is_well_formed(needed, config) {
        return Err(SelectError::InvalidCertificate { needed });
    }

    let certified: BTreeSet<&Value> = cert
        .reports
        .iter()
        .filter_map(|r| r.report.commit_cert.as_ref())
        .filter(|cc| cc.seq == cert.seq && cc.view < cert.new_view && validate_commit_certificate(cc, config))
        .map(|cc| &cc.value)
        .collect();
    if let Some(v) = certified.into_iter().next() {
        return Ok(v.clone());
    }

    let mut votes: BTreeMap<&Value, usize> = BTreeMap::new();
    for v in cert.votes().flatten() {
        *votes.entry(v).or_default() += 1;
    }
    Ok(votes
        .into_iter()
        .find(|(_, n)| *n > config.f())
        .map(|(v, _)| v.clone())
        .unwrap_or(Value::NULL))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct HbftSlot {
    pub accepted: Option<Accepted>,
    /// Attesting senders per (view, value). The primary's PREPARE (or
    /// NEW-VIEW) and the replica's own COMMIT are recorded here too.
    pub commit_log: BTreeMap<(View, Value), BTreeSet<ReplicaId>>,
    pub committed: Option<CommitCertificate>,
    pub vc_buffer: BTreeMap<View, BTreeMap<ReplicaId, ViewChangeReport>>,
    vc_sent: BTreeSet<View>,
    nv_sent: BTreeSet<View>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HbftReplica {
    id: ReplicaId,
    view: View,
    mode: Mode,
    slots: BTreeMap<SeqNum, HbftSlot>,
}

impl HbftReplica {
    pub fn new(id: ReplicaId) -> Self {
        HbftReplica {
            id,
            view: View::INITIAL,
            mode: Mode::InView,
            slots: BTreeMap::new(),
        }
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

    pub fn slot(&self, seq: SeqNum) -> Option<&HbftSlot> {
        self.slots.get(&seq)
    }

    pub fn digest(&self, seq: SeqNum) -> StateDigest {
        let slot = self.slots.get(&seq);
        StateDigest {
            replica: self.id,
            seq,
            view: self.view,
            mode: self.mode,
            accepted: slot.and_then(|s| s.accepted.clone()),
            committed: slot
                .and_then(|s| s.committed.as_ref())
                .map(|cc| Accepted::new(cc.view, cc.value.clone())),
        }
    }

    /// Lower bound on how many more events this replica must handle before
    /// it can commit `value` at `seq` in some view up to `max_view`; `None`
    /// once it has committed. A single event adds at most two attestations
    /// to a log, and only an accepting event (PREPARE or NEW-VIEW) adds two.
    pub fn steps_to_commit(
        &self,
        config: &Config,
        seq: SeqNum,
        value: &Value,
        max_view: View,
    ) -> Option<usize> {
        let q = config.commit_quorum();
        let slot = self.slots.get(&seq);
        if slot.is_some_and(|s| s.committed.is_some()) {
            return None;
        }
        let mut best: Option<usize> = None;
        for w in (self.view.0..=max_view.0).map(View) {
            let lb = if w == self.view {
                if self.mode != Mode::InView {
                    continue;
                }
                let log = slot
                    .and_then(|s| s.commit_log.get(&(w, value.clone())))
                    .map_or(0, BTreeSet::len);
                match slot.and_then(|s| s.accepted.as_ref()) {
                    Some(a) if a.view == w && &a.value == value => q.saturating_sub(log).max(1),
                    Some(a) if a.view == w => continue,
                    _ => 1 + q.saturating_sub(log + 2),
                }
            } else {
                1 + q.saturating_sub(2)
            };
            best = Some(best.map_or(lb, |b| b.min(lb)));
        }
        best
    }

    /// Called on the primary of the current view to propose `value`.
    pub fn propose(&mut self, config: &Config, seq: SeqNum, value: Value) -> Effects {
        if primary_of(self.view, config) != self.id || self.mode != Mode::InView {
            return Effects::note(Note::NotFromPrimary);
        }
        let view = self.view;
        let id = self.id;
        let slot = self.slots.entry(seq).or_default();
        if slot.accepted.is_some() {
            return Effects::note(Note::ConflictingPrepare);
        }
        slot.accepted = Some(Accepted::new(view, value.clone()));
        slot.commit_log
            .entry((view, value.clone()))
            .or_default()
            .insert(id);
        let mut fx = Effects::default();
        fx.broadcast(Payload::Prepare { view, seq, value });
        fx.merge(self.try_commit(config, seq));
        fx
    }

    pub fn on_message(&mut self, config: &Config, from: ReplicaId, payload: &Payload) -> Effects {
        match payload {
            Payload::Prepare { view, seq, value } => self.on_prepare(config, from, *view, *seq, value),
            Payload::Commit { view, seq, value } => self.on_commit(config, from, *view, *seq, value),
            Payload::ViewChange(report) => self.on_viewchange(config, from, report),
            Payload::NewView {
                view,
                seq,
                selected,
                progress_cert,
            } => self.on_newview(config, from, *view, *seq, selected, progress_cert),
        }
    }

    pub fn on_prepare(
        &mut self,
        config: &Config,
        from: ReplicaId,
        view: View,
        seq: SeqNum,
        value: &Value,
    ) -> Effects {
        if from != primary_of(view, config) {
            return Effects::note(Note::NotFromPrimary);
        }
        if let Some(n) = self.outside_current_view(view) {
            return Effects::note(n);
        }
        let id = self.id;
        let slot = self.slots.entry(seq).or_default();
        match &slot.accepted {
            Some(a) if a.view == view && &a.value == value => return Effects::default(),
            Some(_) => return Effects::note(Note::ConflictingPrepare),
            None => {}
        }
        slot.accepted = Some(Accepted::new(view, value.clone()));
        let attesters = slot.commit_log.entry((view, value.clone())).or_default();
        attesters.insert(from);
        attesters.insert(id);

        let mut fx = Effects::default();
        fx.broadcast(Payload::Commit {
            view,
            seq,
            value: value.clone(),
        });
        fx.merge(self.try_commit(config, seq));
        fx.merge(self.check_conflicts(config, seq));
        fx
    }

    pub fn on_commit(
        &mut self,
        config: &Config,
        from: ReplicaId,
        view: View,
        seq: SeqNum,
        value: &Value,
    ) -> Effects {
        if let Some(n) = self.outside_current_view(view) {
            return Effects::note(n);
        }
        let slot = self.slots.entry(seq).or_default();
        if !slot
            .commit_log
            .entry((view, value.clone()))
            .or_default()
            .insert(from)
        {
            return Effects::default();
        }
        let mut fx = self.try_commit(config, seq);
        fx.merge(self.check_conflicts(config, seq));
        fx
    }

    pub fn on_timeout(&mut self, config: &Config, view: View, seq: SeqNum) -> Effects {
        if view != self.view {
            return Effects::note(Note::StaleView);
        }
        self.start_view_change(config, view.next(), seq)
    }

    pub fn on_viewchange(&mut self, config: &Config, from: ReplicaId, report: &ViewChangeReport) -> Effects {
        let target = report.new_view;
        if target <= self.view {
            return Effects::note(Note::StaleView);
        }
        let seq = report.seq;
        let slot = self.slots.entry(seq).or_default();
        let reports = slot.vc_buffer.entry(target).or_default();
        if reports.contains_key(&from) {
            return Effects::default();
        }
        reports.insert(from, report.clone());

        let mut fx = Effects::default();
        let foreign = reports.keys().filter(|r| **r != self.id).count();
        if foreign > config.f() && !slot.vc_sent.contains(&target) {
            fx.merge(self.start_view_change(config, target, seq));
        } else {
            fx.merge(self.maybe_new_view(config, target, seq));
        }
        fx
    }

    pub fn on_newview(
        &mut self,
        config: &Config,
        from: ReplicaId,
        view: View,
        seq: SeqNum,
        selected: &Value,
        cert: &ProgressCertificate,
    ) -> Effects {
        if from != primary_of(view, config) {
            return Effects::note(Note::NotFromPrimary);
        }
        if view <= self.view {
            return Effects::note(Note::StaleView);
        }
        if cert.new_view != view || cert.seq != seq {
            return Effects::note(Note::InvalidCertificate);
        }
        match hbft_select_value(cert, config) {
            Err(_) => return Effects::note(Note::InvalidCertificate),
            Ok(v) if &v != selected => return Effects::note(Note::SelectionMismatch),
            Ok(_) => {}
        }
        self.enter_view(view, seq, selected.clone(), &[from, self.id]);
        let mut fx = Effects::default();
        fx.broadcast(Payload::Commit {
            view,
            seq,
            value: selected.clone(),
        });
        fx.merge(self.try_commit(config, seq));
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

    fn start_view_change(&mut self, config: &Config, target: View, seq: SeqNum) -> Effects {
        let id = self.id;
        let slot = self.slots.entry(seq).or_default();
        if !slot.vc_sent.insert(target) {
            return Effects::default();
        }
        self.mode = match self.mode {
            Mode::ViewChanging { target: t } if t > target => Mode::ViewChanging { target: t },
            _ => Mode::ViewChanging { target },
        };
        let report = ViewChangeReport {
            new_view: target,
            seq,
            accepted: slot.accepted.clone(),
            commit_cert: slot.committed.clone(),
        };
        slot.vc_buffer
            .entry(target)
            .or_default()
            .insert(id, report.clone());
        let mut fx = Effects::default();
        fx.broadcast(Payload::ViewChange(report));
        fx.merge(self.maybe_new_view(config, target, seq));
        fx
    }

    fn maybe_new_view(&mut self, config: &Config, target: View, seq: SeqNum) -> Effects {
        if primary_of(target, config) != self.id || target <= self.view {
            return Effects::default();
        }
        let slot = self.slots.entry(seq).or_default();
        let Some(reports) = slot.vc_buffer.get(&target) else {
            return Effects::default();
        };
        if reports.len() < config.progress_quorum() || slot.nv_sent.contains(&target) {
            return Effects::default();
        }
        let cert = ProgressCertificate {
            new_view: target,
            seq,
            reports: reports
                .iter()
                .map(|(r, rep)| SignedReport {
                    replica: *r,
                    report: rep.clone(),
                })
                .collect(),
        };
        let Ok(selected) = hbft_select_value(&cert, config) else {
            return Effects::note(Note::InvalidCertificate);
        };
        slot.nv_sent.insert(target);
        self.enter_view(target, seq, selected.clone(), &[self.id]);

        let mut fx = Effects::default();
        fx.broadcast(Payload::NewView {
            view: target,
            seq,
            selected,
            progress_cert: cert,
        });
        fx.merge(self.try_commit(config, seq));
        fx
    }

    fn enter_view(&mut self, view: View, seq: SeqNum, value: Value, attesters: &[ReplicaId]) {
        self.view = view;
        self.mode = Mode::InView;
        let slot = self.slots.entry(seq).or_default();
        slot.accepted = Some(Accepted::new(view, value.clone()));
        slot.commit_log.retain(|(v, _), _| *v >= view);
        slot.vc_buffer.retain(|v, _| *v > view);
        slot.commit_log
            .entry((view, value))
            .or_default()
            .extend(attesters.iter().copied());
    }

    fn try_commit(&mut self, config: &Config, seq: SeqNum) -> Effects {
        let Some(slot) = self.slots.get_mut(&seq) else {
            return Effects::default();
        };
        if slot.committed.is_some() {
            return Effects::default();
        }
        let Some(acc) = &slot.accepted else {
            return Effects::default();
        };
        let Some(attesters) = slot.commit_log.get(&(acc.view, acc.value.clone())) else {
            return Effects::default();
        };
        if attesters.len() < config.commit_quorum() {
            return Effects::default();
        }
        let cert = CommitCertificate {
            view: acc.view,
            seq,
            value: acc.value.clone(),
            attestations: attesters.iter().copied().collect(),
        };
        slot.committed = Some(cert.clone());
        Effects {
            commit: Some(LocalCommit {
                view: cert.view,
                seq,
                value: cert.value.clone(),
                cert: Some(cert),
            }),
            ..Effects::default()
        }
    }

    /// `f + 1` COMMITs for a value other than the accepted one start a view
    /// change.
    fn check_conflicts(&mut self, config: &Config, seq: SeqNum) -> Effects {
        if self.mode != Mode::InView {
            return Effects::default();
        }
        let view = self.view;
        let id = self.id;
        let Some(slot) = self.slots.get(&seq) else {
            return Effects::default();
        };
        let Some(acc) = slot.accepted.as_ref().filter(|a| a.view == view) else {
            return Effects::default();
        };
        let conflicting = slot.commit_log.iter().any(|((v, value), senders)| {
            *v == view && value != &acc.value && senders.iter().filter(|s| **s != id).count() > config.f()
        });
        if !conflicting {
            return Effects::default();
        }
        let mut fx = Effects::note(Note::ConflictingCommits);
        fx.merge(self.start_view_change(config, view.next(), seq));
        fx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replica::Dest;
    use crate::types::Protocol;

    fn s1() -> SeqNum {
        SeqNum::new(1).unwrap()
    }

    fn a() -> Value {
        Value::new("a")
    }

    fn b() -> Value {
        Value::new("b")
    }

    /// The four-replica cluster with i1 Byzantine, i1 primary of view 1 and
    /// i2 primary of view 2.
    fn counterexample_cfg() -> Config {
        Config::new(Protocol::Hbft, 1, 4, [ReplicaId(0)])
            .unwrap()
            .with_primaries([(View(1), ReplicaId(0)), (View(2), ReplicaId(1))])
            .unwrap()
    }

    fn report(view: u64, accepted: Option<Value>, cc: Option<CommitCertificate>) -> ViewChangeReport {
        ViewChangeReport {
            new_view: View(2),
            seq: s1(),
            accepted: accepted.map(|v| Accepted::new(View(view), v)),
            commit_cert: cc,
        }
    }

    fn cert(reports: Vec<(u16, ViewChangeReport)>) -> ProgressCertificate {
        ProgressCertificate {
            new_view: View(2),
            seq: s1(),
            reports: reports
                .into_iter()
                .map(|(r, report)| SignedReport {
                    replica: ReplicaId(r),
                    report,
                })
                .collect(),
        }
    }

    fn cc_for(value: Value) -> CommitCertificate {
        CommitCertificate {
            view: View(1),
            seq: s1(),
            value,
            attestations: vec![ReplicaId(0), ReplicaId(1), ReplicaId(2)],
        }
    }

    fn commit_payload(view: u64, value: Value) -> Payload {
        Payload::Commit {
            view: View(view),
            seq: s1(),
            value,
        }
    }

    #[test]
    fn prepare_from_primary_is_accepted_once() {
        let c = counterexample_cfg();
        let mut i2 = HbftReplica::new(ReplicaId(1));
        let fx = i2.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        assert_eq!(fx.outbound.len(), 1);
        assert_eq!(fx.outbound[0].dest, Dest::Others);
        assert_eq!(fx.outbound[0].payload, commit_payload(1, a()));
        assert_eq!(i2.slot(s1()).unwrap().accepted, Some(Accepted::new(View(1), a())));

        let again = i2.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        assert!(again.is_quiet());
        let other = i2.on_prepare(&c, ReplicaId(0), View(1), s1(), &b());
        assert!(other.is_quiet());
        assert_eq!(other.notes, vec![Note::ConflictingPrepare]);
    }

    #[test]
    fn prepare_from_non_primary_is_ignored() {
        let c = counterexample_cfg();
        let mut i3 = HbftReplica::new(ReplicaId(2));
        let fx = i3.on_prepare(&c, ReplicaId(3), View(1), s1(), &a());
        assert_eq!(fx.notes, vec![Note::NotFromPrimary]);
        assert!(i3.slot(s1()).is_none());
    }

    #[test]
    fn commit_quorum_counts_primary_prepare_and_self() {
        let c = counterexample_cfg();
        let mut i3 = HbftReplica::new(ReplicaId(2));
        i3.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        let fx = i3.on_commit(&c, ReplicaId(1), View(1), s1(), &a());
        let commit = fx.commit.expect("i3 commits a");
        assert_eq!(commit.value, a());
        assert_eq!(commit.view, View(1));
        let cc = commit.cert.unwrap();
        assert_eq!(cc.attestations, vec![ReplicaId(0), ReplicaId(1), ReplicaId(2)]);
        assert!(validate_commit_certificate(&cc, &c));
    }

    #[test]
    fn below_quorum_does_not_commit() {
        let c = counterexample_cfg();
        let mut i4 = HbftReplica::new(ReplicaId(3));
        i4.on_prepare(&c, ReplicaId(0), View(1), s1(), &b());
        assert!(i4.slot(s1()).unwrap().committed.is_none());
        let fx = i4.on_commit(&c, ReplicaId(1), View(1), s1(), &a());
        assert!(fx.commit.is_none());
    }

    #[test]
    fn f_plus_one_conflicting_commits_trigger_view_change() {
        let c = counterexample_cfg();
        let mut i4 = HbftReplica::new(ReplicaId(3));
        i4.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        let one = i4.on_commit(&c, ReplicaId(1), View(1), s1(), &b());
        assert!(one.outbound.is_empty());
        let two = i4.on_commit(&c, ReplicaId(2), View(1), s1(), &b());
        assert!(two.notes.contains(&Note::ConflictingCommits));
        assert!(matches!(
            two.outbound[0].payload,
            Payload::ViewChange(ViewChangeReport {
                new_view: View(2),
                ..
            })
        ));
        assert_eq!(i4.mode(), Mode::ViewChanging { target: View(2) });
    }

    #[test]
    fn future_view_commit_is_dropped() {
        let c = counterexample_cfg();
        let mut i2 = HbftReplica::new(ReplicaId(1));
        let fx = i2.on_commit(&c, ReplicaId(2), View(2), s1(), &a());
        assert_eq!(fx.notes, vec![Note::FutureView]);
        assert!(i2.slot(s1()).is_none_or(|s| s.commit_log.is_empty()));
    }

    #[test]
    fn timeout_reports_accepted_value() {
        let c = counterexample_cfg();
        let mut i2 = HbftReplica::new(ReplicaId(1));
        i2.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        let fx = i2.on_timeout(&c, View(1), s1());
        assert_eq!(fx.outbound.len(), 1);
        assert_eq!(
            fx.outbound[0].payload,
            Payload::ViewChange(report(1, Some(a()), None))
        );
        // stale or repeated timeouts do nothing
        assert!(i2.on_timeout(&c, View(1), s1()).is_quiet());
        assert!(i2.on_timeout(&c, View(0), s1()).is_quiet());
    }

    #[test]
    fn timeout_with_nothing_accepted() {
        let c = counterexample_cfg();
        let mut i3 = HbftReplica::new(ReplicaId(2));
        let fx = i3.on_timeout(&c, View(1), s1());
        assert_eq!(fx.outbound[0].payload, Payload::ViewChange(report(1, None, None)));
    }

    #[test]
    fn committed_replica_reports_its_certificate() {
        let c = counterexample_cfg();
        let mut i3 = HbftReplica::new(ReplicaId(2));
        i3.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        let cc = i3
            .on_commit(&c, ReplicaId(1), View(1), s1(), &a())
            .commit
            .unwrap()
            .cert
            .unwrap();
        let fx = i3.on_timeout(&c, View(1), s1());
        let Payload::ViewChange(r) = &fx.outbound[0].payload else {
            panic!("expected view change");
        };
        assert_eq!(r.commit_cert.as_ref(), Some(&cc));
    }

    #[test]
    fn selection_rules() {
        let c = counterexample_cfg();
        // the certificate from the counterexample: i2:a, i4:b, i1:b
        let observed = cert(vec![
            (0, report(1, Some(b()), None)),
            (1, report(1, Some(a()), None)),
            (3, report(1, Some(b()), None)),
        ]);
        assert_eq!(hbft_select_value(&observed, &c), Ok(b()));

        let with_cc = cert(vec![
            (0, report(1, Some(b()), None)),
            (2, report(1, Some(a()), Some(cc_for(a())))),
            (3, report(1, Some(b()), None)),
        ]);
        assert_eq!(hbft_select_value(&with_cc, &c), Ok(a()));

        let empty = cert(vec![
            (0, report(1, None, None)),
            (1, report(1, None, None)),
            (2, report(1, None, None)),
        ]);
        assert_eq!(hbft_select_value(&empty, &c), Ok(Value::NULL));

        let split = cert(vec![
            (0, report(1, Some(b()), None)),
            (1, report(1, Some(a()), None)),
            (2, report(1, None, None)),
        ]);
        assert_eq!(hbft_select_value(&split, &c), Ok(Value::NULL));

        let short = cert(vec![
            (0, report(1, Some(b()), None)),
            (1, report(1, Some(b()), None)),
        ]);
        assert!(hbft_select_value(&short, &c).is_err());
        let dup = cert(vec![
            (1, report(1, Some(b()), None)),
            (1, report(1, Some(b()), None)),
            (2, report(1, Some(b()), None)),
        ]);
        assert!(hbft_select_value(&dup, &c).is_err());
    }

    #[test]
    fn undersized_commit_certificate_is_not_precedence() {
        let c = counterexample_cfg();
        let mut weak = cc_for(a());
        weak.attestations.truncate(2);
        let p = cert(vec![
            (0, report(1, Some(b()), None)),
            (2, report(1, Some(a()), Some(weak))),
            (3, report(1, Some(b()), None)),
        ]);
        assert_eq!(hbft_select_value(&p, &c), Ok(b()));
    }

    #[test]
    fn tie_breaks_to_smallest_value() {
        let c = Config::new(Protocol::Hbft, 1, 5, []).unwrap();
        let p = ProgressCertificate {
            new_view: View(2),
            seq: s1(),
            reports: [(0, b()), (1, b()), (2, a()), (3, a())]
                .into_iter()
                .map(|(r, v)| SignedReport {
                    replica: ReplicaId(r),
                    report: report(1, Some(v), None),
                })
                .collect(),
        };
        assert_eq!(hbft_select_value(&p, &c), Ok(a()));
    }

    #[test]
    fn new_primary_waits_for_quorum_then_proposes() {
        let c = counterexample_cfg();
        let mut i2 = HbftReplica::new(ReplicaId(1));
        i2.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        let own = i2.on_timeout(&c, View(1), s1());
        assert_eq!(own.outbound.len(), 1);
        let fx = i2.on_viewchange(&c, ReplicaId(3), &report(1, Some(b()), None));
        assert!(fx.outbound.is_empty());
        let fx = i2.on_viewchange(&c, ReplicaId(0), &report(1, Some(b()), None));
        let Payload::NewView {
            view,
            selected,
            progress_cert,
            ..
        } = &fx.outbound[0].payload
        else {
            panic!("expected NEW-VIEW, got {:?}", fx.outbound);
        };
        assert_eq!(*view, View(2));
        assert_eq!(*selected, b());
        let ids: Vec<_> = progress_cert.reports.iter().map(|r| r.replica).collect();
        assert_eq!(ids, vec![ReplicaId(0), ReplicaId(1), ReplicaId(3)]);
        assert_eq!(i2.view(), View(2));
        assert_eq!(i2.mode(), Mode::InView);
        // duplicate reports count once and do not re-trigger
        assert!(i2
            .on_viewchange(&c, ReplicaId(3), &report(1, Some(b()), None))
            .is_quiet());
    }

    #[test]
    fn single_report_is_below_join_threshold() {
        let c = counterexample_cfg();
        let mut i3 = HbftReplica::new(ReplicaId(2));
        assert!(i3
            .on_viewchange(&c, ReplicaId(1), &report(1, Some(a()), None))
            .is_quiet());
        let fx = i3.on_viewchange(&c, ReplicaId(3), &report(1, Some(b()), None));
        assert_eq!(fx.outbound.len(), 1, "f+1 reports make i3 join");
        assert!(matches!(fx.outbound[0].payload, Payload::ViewChange(_)));
    }

    #[test]
    fn newview_is_revalidated_locally() {
        let c = counterexample_cfg();
        let p = cert(vec![
            (0, report(1, Some(b()), None)),
            (1, report(1, Some(a()), None)),
            (3, report(1, Some(b()), None)),
        ]);
        let mut i3 = HbftReplica::new(ReplicaId(2));
        i3.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());

        let wrong = i3.on_newview(&c, ReplicaId(1), View(2), s1(), &a(), &p);
        assert_eq!(wrong.notes, vec![Note::SelectionMismatch]);
        let forged = i3.on_newview(&c, ReplicaId(3), View(2), s1(), &b(), &p);
        assert_eq!(forged.notes, vec![Note::NotFromPrimary]);
        assert_eq!(i3.view(), View(1));

        let ok = i3.on_newview(&c, ReplicaId(1), View(2), s1(), &b(), &p);
        assert_eq!(ok.outbound[0].payload, commit_payload(2, b()));
        assert_eq!(i3.view(), View(2));
        assert_eq!(i3.slot(s1()).unwrap().accepted, Some(Accepted::new(View(2), b())));
    }

    #[test]
    fn committed_value_is_not_overwritten() {
        let c = counterexample_cfg();
        let mut i3 = HbftReplica::new(ReplicaId(2));
        i3.on_prepare(&c, ReplicaId(0), View(1), s1(), &a());
        i3.on_commit(&c, ReplicaId(1), View(1), s1(), &a());
        let p = cert(vec![
            (0, report(1, Some(b()), None)),
            (1, report(1, Some(a()), None)),
            (3, report(1, Some(b()), None)),
        ]);
        i3.on_newview(&c, ReplicaId(1), View(2), s1(), &b(), &p);
        let fx = i3.on_commit(&c, ReplicaId(3), View(2), s1(), &b());
        assert!(fx.commit.is_none());
        assert_eq!(i3.digest(s1()).committed, Some(Accepted::new(View(1), a())));
    }
}
