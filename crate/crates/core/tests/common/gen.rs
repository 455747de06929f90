//! Generators shared by the property suite and the acceptance run.

use consensus_lab::adversary::{ByzantineScript, Emission, ScriptAction, Trigger};
use consensus_lab::message::{
    Accepted, CommitCertificate, Payload, PayloadKind, ProgressCertificate, SignedReport, ViewChangeReport,
};
use consensus_lab::scenario::{AdversaryAt, Directive, Proposal, ScenarioFile, TimeoutAt, SCHEMA};
use consensus_lab::types::{Protocol, ReplicaId, SeqNum, Value, View};
use proptest::prelude::*;
use proptest::sample::subsequence;

pub fn s1() -> SeqNum {
    SeqNum::new(1).unwrap()
}

fn replica(n: u16) -> impl Strategy<Value = ReplicaId> {
    (0..n).prop_map(ReplicaId)
}

fn ids(n: u16) -> Vec<ReplicaId> {
    (0..n).map(ReplicaId).collect()
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![Just(Value::new("a")), Just(Value::new("b"))]
}

fn view() -> impl Strategy<Value = View> {
    (1u64..=2).prop_map(View)
}

fn commit_cert(n: u16) -> impl Strategy<Value = CommitCertificate> {
    (value(), subsequence(ids(n), 2..=4)).prop_map(|(value, attestations)| CommitCertificate {
        view: View(1),
        seq: s1(),
        value,
        attestations,
    })
}

fn report(n: u16) -> impl Strategy<Value = ViewChangeReport> {
    (
        proptest::option::of(value()),
        proptest::option::weighted(0.3, commit_cert(n)),
    )
        .prop_map(|(accepted, commit_cert)| ViewChangeReport {
            new_view: View(2),
            seq: s1(),
            accepted: accepted.map(|v| Accepted::new(View(1), v)),
            commit_cert,
        })
}

fn payload(n: u16) -> impl Strategy<Value = Payload> {
    prop_oneof![
        (view(), value()).prop_map(|(view, value)| Payload::Prepare {
            view,
            seq: s1(),
            value
        }),
        (view(), value()).prop_map(|(view, value)| Payload::Commit {
            view,
            seq: s1(),
            value
        }),
        report(n).prop_map(Payload::ViewChange),
        (value(), proptest::collection::vec((replica(n), report(n)), 3..=5)).prop_map(
            |(selected, reports)| {
                Payload::NewView {
                    view: View(2),
                    seq: s1(),
                    selected,
                    progress_cert: ProgressCertificate {
                        new_view: View(2),
                        seq: s1(),
                        reports: reports
                            .into_iter()
                            .map(|(replica, report)| SignedReport { replica, report })
                            .collect(),
                    },
                }
            }
        ),
    ]
}

fn emission(n: u16) -> impl Strategy<Value = Emission> {
    (
        subsequence(ids(n), 1..=3),
        payload(n),
        proptest::option::weighted(0.5, replica(n)),
    )
        .prop_map(|(to, payload, sender)| Emission { to, payload, sender })
}

fn triggers() -> Vec<Trigger> {
    let receive = |kind, v| Trigger::Receive {
        kind,
        view: View(v),
        from: None,
    };
    vec![
        Trigger::Start,
        Trigger::Timeout {
            view: View(1),
            seq: s1(),
        },
        receive(PayloadKind::Prepare, 1),
        receive(PayloadKind::Commit, 1),
        receive(PayloadKind::ViewChange, 2),
        receive(PayloadKind::NewView, 2),
        receive(PayloadKind::Commit, 2),
        Trigger::Manual,
    ]
}

prop_compose! {
    /// A Byzantine backup (never the view-1 primary) running a random script.
    pub fn attack(protocol: Protocol)(
        n in Just(protocol.min_replicas(1) as u16),
        byz in (0..protocol.min_replicas(1) as u16).prop_filter("backup", |b| *b != 1),
        chosen in subsequence(triggers(), 1..=4),
        emissions in proptest::collection::vec(
            proptest::collection::vec(emission(protocol.min_replicas(1) as u16), 1..=3),
            4,
        ),
        timeouts in subsequence(ids(protocol.min_replicas(1) as u16), 0..=4),
    ) -> ScenarioFile {
        let byz = ReplicaId(byz);
        let actions: Vec<ScriptAction> = chosen
            .into_iter()
            .zip(emissions)
            .enumerate()
            .map(|(i, (trigger, emit))| ScriptAction { id: format!("act-{i}"), trigger, emit })
            .collect();
        let mut schedule: Vec<Directive> = actions
            .iter()
            .filter(|a| a.trigger == Trigger::Manual)
            .map(|a| Directive::Adversary(AdversaryAt { replica: byz, action: a.id.clone() }))
            .collect();
        schedule.extend(timeouts.into_iter().map(|replica| {
            Directive::Timeout(TimeoutAt { replica, view: View(1), seq: s1() })
        }));
        ScenarioFile {
            schema: SCHEMA.into(),
            name: None,
            description: None,
            protocol,
            f: 1,
            n_replicas: n as usize,
            byzantine: vec![byz],
            primary_map: Default::default(),
            seq: s1(),
            initial_proposals: vec![Proposal { view: View(1), value: Value::new("a"), to: None }],
            schedule,
            scripts: vec![ByzantineScript { replica: byz, actions }],
        }
    }
}

/// A progress certificate with one report per vote, from replicas 0, 1, ...;
/// `certified_at` attaches a commit certificate to one report.
pub fn certificate(votes: &[Option<&str>], certified_at: Option<(usize, Vec<u16>)>) -> ProgressCertificate {
    ProgressCertificate {
        new_view: View(2),
        seq: s1(),
        reports: votes
            .iter()
            .enumerate()
            .map(|(i, v)| SignedReport {
                replica: ReplicaId(i as u16),
                report: ViewChangeReport {
                    new_view: View(2),
                    seq: s1(),
                    accepted: v.map(|l| Accepted::new(View(1), Value::new(l))),
                    commit_cert: certified_at.as_ref().filter(|(at, _)| *at == i).map(|(_, att)| {
                        CommitCertificate {
                            view: View(1),
                            seq: s1(),
                            value: Value::new(v.expect("certified reports carry a vote")),
                            attestations: att.iter().copied().map(ReplicaId).collect(),
                        }
                    }),
                },
            })
            .collect(),
    }
}
