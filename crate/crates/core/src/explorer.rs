//! Bounded exhaustive search for agreement violations.
//!
//! The search is a depth-first walk over three kinds of choice:
//!
//! * the Byzantine replica sends one message from its pool to one correct
//!   replica (at most `max_byz_messages` times per run),
//! * one in-flight message is delivered,
//! * a correct replica times out in its current view (below `max_view`).
//!
//! The Byzantine replica is the primary of view 1 and keeps no state, so
//! what matters is which messages it sends and when. Its pool holds every
//! PREPARE it may send as a primary, every COMMIT and every VIEW-CHANGE
//! report over the value universe, for views up to `max_view`. Messages to
//! it are dropped. A choice that changes nothing is skipped, and with
//! `dedup` on, a state already expanded at the same or a smaller depth is
//! not expanded again.
//!
//! The first violating run is shrunk by deleting one choice at a time while
//! the same pair of values still conflicts, and written out as a scenario
//! file whose replay is the returned trace.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap};
use std::hash::{Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

use crate::adversary::{ByzantineScript, Emission, ScriptAction, Trigger};
use crate::checker::{agreement_of, check, validity_of, Agreement, Validity, Verdict};
use crate::message::{Accepted, Message, Payload};
use crate::net::Selector;
use crate::replica::Mode;
use crate::scenario::{
    run_scenario_with, AdversaryAt, Directive, Proposal, ScenarioError, ScenarioFile, TimeoutAt, SCHEMA,
};
use crate::sim::{SimOptions, Simulation, Trace};
use crate::types::{primary_of, Config, ConfigError, Protocol, ReplicaId, SeqNum, Value, View};

pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_MAX_BYZ_MESSAGES: usize = 5;
pub const DEFAULT_MAX_VIEW: View = View(2);

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error("witness does not replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreSpec {
    pub config: Config,
    pub seq: SeqNum,
    pub value_universe: BTreeSet<Value>,
    pub max_steps: usize,
    pub max_byz_messages: usize,
    pub dedup: bool,
    /// Highest view the search enters.
    pub max_view: View,
}

impl ExploreSpec {
    /// Default bounds for `protocol` with `n` replicas, where the primary of
    /// view 1 is Byzantine whenever `f > 0`.
    pub fn new(protocol: Protocol, f: usize, n: usize) -> Result<Self, ExploreError> {
        let probe = Config::new(protocol, f, n, [])?;
        let byzantine = if f > 0 {
            vec![primary_of(View::INITIAL, &probe)]
        } else {
            vec![]
        };
        Ok(ExploreSpec {
            config: Config::new(protocol, f, n, byzantine)?,
            seq: SeqNum::new(1).expect("positive"),
            value_universe: [Value::new("a"), Value::new("b")].into_iter().collect(),
            max_steps: DEFAULT_MAX_STEPS,
            max_byz_messages: DEFAULT_MAX_BYZ_MESSAGES,
            dedup: true,
            max_view: DEFAULT_MAX_VIEW,
        })
    }

    pub fn validate(&self) -> Result<(), ExploreError> {
        if self.max_steps == 0 {
            return Err(ExploreError::Bounds("max_steps must be positive".into()));
        }
        if self.value_universe.is_empty() || self.value_universe.len() > 2 {
            return Err(ExploreError::Bounds(
                "the value universe holds one or two values".into(),
            ));
        }
        if self.value_universe.iter().any(Value::is_null) {
            return Err(ExploreError::Bounds("NULL is not a client value".into()));
        }
        if self.max_view < View::INITIAL {
            return Err(ExploreError::Bounds("max_view must be at least 1".into()));
        }
        Ok(())
    }

    fn byzantine(&self) -> Option<ReplicaId> {
        self.config.byzantine().iter().next().copied()
    }

    /// The value a correct primary of view 1 proposes, and the fresh value
    /// of later views.
    fn opening_value(&self) -> Value {
        self.value_universe
            .iter()
            .next()
            .cloned()
            .expect("validated non-empty")
    }
}

/// One step of a run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Inject {
        from: ReplicaId,
        to: ReplicaId,
        payload: Payload,
    },
    Deliver {
        from: ReplicaId,
        to: ReplicaId,
        payload: Payload,
    },
    Timeout {
        replica: ReplicaId,
        view: View,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    /// Distinct states expanded.
    pub states: u64,
    /// Runs that ended because nothing was left to do or `max_steps` was
    /// reached.
    pub traces: u64,
    /// Choices skipped because they changed nothing or led to a state
    /// already expanded.
    pub pruned: u64,
    /// States where `max_steps` cut the run short.
    pub step_bound_hits: u64,
    /// States where the Byzantine budget was spent.
    pub budget_exhausted: u64,
    /// Commits of a value no primary proposed, over all explored runs.
    pub validity_violations: u64,
}

#[derive(Clone, Debug)]
pub struct Witness {
    /// Choices of the violating run as first found.
    pub found: Vec<Choice>,
    /// After greedy deletion.
    pub minimized: Vec<Choice>,
    pub scenario: ScenarioFile,
    pub trace: Trace,
    pub verdict: Verdict,
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Found(Box<Witness>),
    NoneWithinBounds,
}

#[derive(Clone, Debug)]
pub struct Exploration {
    pub outcome: Outcome,
    pub stats: Stats,
}

impl Exploration {
    pub fn found(&self) -> Option<&Witness> {
        match &self.outcome {
            Outcome::Found(w) => Some(w),
            Outcome::NoneWithinBounds => None,
        }
    }
}

struct Search<'a> {
    spec: &'a ExploreSpec,
    pool: Vec<(ReplicaId, Payload)>,
    seen: HashMap<u128, usize>,
    stats: Stats,
    path: Vec<Choice>,
}

pub fn explore(spec: &ExploreSpec) -> Result<Exploration, ExploreError> {
    spec.validate()?;
    let mut search = Search {
        spec,
        pool: byzantine_pool(spec),
        seen: HashMap::new(),
        stats: Stats::default(),
        path: Vec::new(),
    };
    let root = initial_simulation(spec);
    let found = search.dfs(root, 0);
    let stats = search.stats;
    let Some(found) = found else {
        return Ok(Exploration {
            outcome: Outcome::NoneWithinBounds,
            stats,
        });
    };
    let minimized = minimize(spec, &found);
    let scenario = witness_scenario(spec, &minimized);
    let run = run_scenario_with(&scenario, u64::MAX)?;
    let verdict = check(&run.trace, &run.config);
    if !matches!(verdict.agreement, Agreement::Violated { .. }) {
        return Err(ExploreError::Replay(
            "the emitted scenario does not violate agreement".into(),
        ));
    }
    Ok(Exploration {
        outcome: Outcome::Found(Box::new(Witness {
            found,
            minimized,
            scenario,
            trace: run.trace,
            verdict,
        })),
        stats,
    })
}

fn initial_simulation(spec: &ExploreSpec) -> Simulation {
    let options = SimOptions {
        step_limit: u64::MAX,
        record_trace: false,
        deliver_to_byzantine: false,
    };
    let fresh: Vec<(View, Value)> = (2..=spec.max_view.0)
        .map(|v| (View(v), spec.opening_value()))
        .collect();
    let mut sim = Simulation::new(spec.config.clone(), spec.seq, &fresh, options);
    sim.start(Some(spec.opening_value()))
        .expect("a correct primary's proposal is always accepted by the network");
    sim
}

fn byzantine_pool(spec: &ExploreSpec) -> Vec<(ReplicaId, Payload)> {
    let Some(byz) = spec.byzantine() else {
        return Vec::new();
    };
    let seq = spec.seq;
    let views = || (1..=spec.max_view.0).map(View);
    let mut payloads = Vec::new();
    for view in views().filter(|v| primary_of(*v, &spec.config) == byz) {
        for value in &spec.value_universe {
            payloads.push(Payload::Prepare {
                view,
                seq,
                value: value.clone(),
            });
        }
    }
    for view in views() {
        for value in &spec.value_universe {
            payloads.push(Payload::Commit {
                view,
                seq,
                value: value.clone(),
            });
        }
    }
    for new_view in views().skip(1) {
        let mut reports: Vec<Option<Accepted>> = Vec::new();
        for view in (1..new_view.0).map(View) {
            for value in &spec.value_universe {
                reports.push(Some(Accepted::new(view, value.clone())));
            }
        }
        // an empty report is tried after every non-empty one
        reports.push(None);
        for accepted in reports {
            payloads.push(Payload::ViewChange(crate::message::ViewChangeReport {
                new_view,
                seq,
                accepted,
                commit_cert: None,
            }));
        }
    }
    let recipients: Vec<ReplicaId> = spec.config.correct_replicas().collect();
    payloads
        .into_iter()
        .flat_map(|p| recipients.iter().map(move |r| (*r, p.clone())))
        .collect()
}

fn state_key(sim: &Simulation, byz_used: usize) -> u128 {
    let mut pending: Vec<(ReplicaId, &Message)> =
        sim.network().pending().map(|p| (p.to, &p.message)).collect();
    pending.sort();
    let half = |salt: u64| {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        sim.nodes().hash(&mut h);
        pending.hash(&mut h);
        sim.proposals().hash(&mut h);
        byz_used.hash(&mut h);
        h.finish()
    };
    (u128::from(half(0x5eed)) << 64) | u128::from(half(0xfeed))
}

fn pending_count(sim: &Simulation) -> usize {
    sim.network().pending().count()
}

/// Applies `choice`; `None` when it cannot be applied.
fn apply(sim: &mut Simulation, choice: &Choice) -> Option<()> {
    match choice {
        Choice::Inject { from, to, payload } => {
            let message = Message {
                sender: *from,
                payload: payload.clone(),
            };
            sim.inject(*to, message).ok().filter(|ok| *ok).map(|_| ())
        }
        Choice::Deliver { from, to, payload } => {
            let id = sim
                .network()
                .pending()
                .find(|p| p.to == *to && p.message.sender == *from && &p.message.payload == payload)?
                .id;
            sim.deliver(id).ok().filter(|ok| *ok).map(|_| ())
        }
        Choice::Timeout { replica, view } => sim
            .fire_timeout(*replica, *view, sim.seq())
            .ok()
            .filter(|ok| *ok)
            .map(|_| ()),
    }
}

impl Search<'_> {
    fn choices(&self, sim: &Simulation, byz_used: usize) -> Vec<Choice> {
        let mut out = Vec::new();
        if let Some(byz) = self
            .spec
            .byzantine()
            .filter(|_| byz_used < self.spec.max_byz_messages)
        {
            out.extend(self.pool.iter().map(|(to, payload)| Choice::Inject {
                from: byz,
                to: *to,
                payload: payload.clone(),
            }));
        }
        out.extend(sim.network().pending().map(|p| Choice::Deliver {
            from: p.message.sender,
            to: p.to,
            payload: p.message.payload.clone(),
        }));
        for r in self.spec.config.correct_replicas() {
            let rep = sim.replica(r).expect("correct replica");
            if rep.mode() == Mode::InView && rep.view() < self.spec.max_view {
                out.push(Choice::Timeout {
                    replica: r,
                    view: rep.view(),
                });
            }
        }
        out
    }

    /// Lower bound on the events still needed before two correct replicas
    /// commit different values; `None` if that cannot happen any more.
    fn distance_to_violation(&self, sim: &Simulation) -> Option<usize> {
        let config = &self.spec.config;
        let committed: BTreeSet<&Value> = sim.commits().iter().map(|e| &e.value).collect();
        if committed.len() > 1 {
            return Some(0);
        }
        let mut values: Vec<Value> = self.spec.value_universe.iter().cloned().collect();
        values.push(Value::NULL);
        let mut costs: Vec<(ReplicaId, &Value, usize)> = Vec::new();
        for r in config.correct_replicas() {
            let rep = sim.replica(r).expect("correct replica");
            for v in &values {
                if let Some(c) = rep.steps_to_commit(config, sim.seq(), v, self.spec.max_view) {
                    costs.push((r, v, c));
                }
            }
        }
        if let Some(first) = committed.first() {
            return costs.iter().filter(|(_, v, _)| v != first).map(|c| c.2).min();
        }
        let mut best = None;
        for (i, (r1, v1, c1)) in costs.iter().enumerate() {
            for (r2, v2, c2) in &costs[i + 1..] {
                if r1 != r2 && v1 != v2 {
                    best = Some(best.map_or(c1 + c2, |b: usize| b.min(c1 + c2)));
                }
            }
        }
        best
    }

    fn dfs(&mut self, sim: Simulation, byz_used: usize) -> Option<Vec<Choice>> {
        let depth = self.path.len();
        if self.spec.dedup {
            let key = state_key(&sim, byz_used);
            match self.seen.get(&key) {
                Some(d) if *d <= depth => {
                    self.stats.pruned += 1;
                    return None;
                }
                _ => {
                    self.seen.insert(key, depth);
                }
            }
        }
        self.stats.states += 1;
        if depth >= self.spec.max_steps {
            self.stats.step_bound_hits += 1;
            self.stats.traces += 1;
            return None;
        }
        if byz_used >= self.spec.max_byz_messages && self.spec.byzantine().is_some() {
            self.stats.budget_exhausted += 1;
        }

        let mut expanded = false;
        for choice in self.choices(&sim, byz_used) {
            let mut next = sim.clone();
            let before_pending = pending_count(&sim);
            let touched = match &choice {
                Choice::Inject { to, .. } | Choice::Deliver { to, .. } => *to,
                Choice::Timeout { replica, .. } => *replica,
            };
            let before_node = sim.nodes()[touched.index()].clone();
            let commits_before = next.commits().len();
            if apply(&mut next, &choice).is_none() {
                continue;
            }
            let consumed = usize::from(matches!(choice, Choice::Deliver { .. }));
            if next.nodes()[touched.index()] == before_node
                && pending_count(&next) + consumed == before_pending
            {
                self.stats.pruned += 1;
                continue;
            }
            self.path.push(choice.clone());
            if next.commits().len() > commits_before {
                if validity_of(next.commits(), next.proposals(), &self.spec.config) != Validity::Holds {
                    self.stats.validity_violations += 1;
                }
                if matches!(
                    agreement_of(next.commits(), &self.spec.config),
                    Agreement::Violated { .. }
                ) {
                    self.stats.traces += 1;
                    return Some(self.path.clone());
                }
            }
            if depth + 1 + self.distance_to_violation(&next).unwrap_or(usize::MAX / 2) > self.spec.max_steps {
                self.stats.pruned += 1;
                self.path.pop();
                continue;
            }
            expanded = true;
            let used = byz_used + usize::from(matches!(choice, Choice::Inject { .. }));
            if let Some(found) = self.dfs(next, used) {
                return Some(found);
            }
            self.path.pop();
        }
        if !expanded {
            self.stats.traces += 1;
        }
        None
    }
}

/// Replays `choices` from the initial state; `None` if some choice no
/// longer applies.
fn replay(spec: &ExploreSpec, choices: &[Choice]) -> Option<Simulation> {
    let mut sim = initial_simulation(spec);
    for c in choices {
        apply(&mut sim, c)?;
    }
    Some(sim)
}

fn conflicting_values(commits: &[crate::message::CommitEvent], config: &Config) -> Option<BTreeSet<Value>> {
    match agreement_of(commits, config) {
        Agreement::Violated { witness } => Some(witness.iter().map(|e| e.value.clone()).collect()),
        Agreement::Holds => None,
    }
}

/// Greedy single-choice deletion that keeps the same pair of conflicting
/// values.
fn minimize(spec: &ExploreSpec, found: &[Choice]) -> Vec<Choice> {
    let target = replay(spec, found)
        .and_then(|s| conflicting_values(s.commits(), &spec.config))
        .expect("the search only reports violating runs");
    let mut current = found.to_vec();
    loop {
        let mut changed = false;
        let mut i = 0;
        while i < current.len() {
            let mut candidate = current.clone();
            candidate.remove(i);
            let keeps = replay(spec, &candidate)
                .and_then(|s| conflicting_values(s.commits(), &spec.config))
                .is_some_and(|v| v == target);
            if keeps {
                current = candidate;
                changed = true;
            } else {
                i += 1;
            }
        }
        if !changed {
            return current;
        }
    }
}

fn selector_for(from: ReplicaId, to: ReplicaId, payload: &Payload) -> Selector {
    Selector {
        kind: Some(payload.kind()),
        from: vec![from],
        to: vec![to],
        view: Some(payload.view()),
        value: payload.value().cloned(),
        ..Selector::default()
    }
}

/// A scenario file that replays `choices`.
pub fn witness_scenario(spec: &ExploreSpec, choices: &[Choice]) -> ScenarioFile {
    let seq = spec.seq;
    let mut schedule = vec![Directive::Hold(Selector::any())];
    let mut actions = Vec::new();
    for c in choices {
        match c {
            Choice::Inject { from, to, payload } => {
                let id = format!("send-{}", actions.len() + 1);
                actions.push(ScriptAction {
                    id: id.clone(),
                    trigger: Trigger::Manual,
                    emit: vec![Emission {
                        to: vec![*to],
                        payload: payload.clone(),
                        sender: None,
                    }],
                });
                schedule.push(Directive::Adversary(AdversaryAt {
                    replica: *from,
                    action: id,
                }));
                schedule.push(Directive::Deliver(selector_for(*from, *to, payload)));
            }
            Choice::Deliver { from, to, payload } => {
                schedule.push(Directive::Deliver(selector_for(*from, *to, payload)));
            }
            Choice::Timeout { replica, view } => schedule.push(Directive::Timeout(TimeoutAt {
                replica: *replica,
                view: *view,
                seq,
            })),
        }
    }
    let mut initial_proposals = Vec::new();
    let opening = primary_of(View::INITIAL, &spec.config);
    if !spec.config.is_byzantine(opening) {
        initial_proposals.push(Proposal {
            view: View::INITIAL,
            value: spec.opening_value(),
            to: None,
        });
    }
    for v in (2..=spec.max_view.0).map(View) {
        if !spec.config.is_byzantine(primary_of(v, &spec.config)) {
            initial_proposals.push(Proposal {
                view: v,
                value: spec.opening_value(),
                to: None,
            });
        }
    }
    let scripts = spec
        .byzantine()
        .filter(|_| !actions.is_empty())
        .map(|replica| vec![ByzantineScript { replica, actions }])
        .unwrap_or_default();
    ScenarioFile {
        schema: SCHEMA.to_string(),
        name: Some(format!("{}_explorer_witness", spec.config.protocol())),
        description: Some(format!(
            "Found by bounded search (max_steps={}, max_byz_messages={}, max_view={}). Every message is held and delivered explicitly.",
            spec.max_steps, spec.max_byz_messages, spec.max_view.0
        )),
        protocol: spec.config.protocol(),
        f: spec.config.f(),
        n_replicas: spec.config.n(),
        byzantine: spec.config.byzantine().iter().copied().collect(),
        primary_map: spec.config.primary_overrides().clone(),
        seq,
        initial_proposals,
        schedule,
        scripts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f0_finds_nothing() {
        for (p, n) in [(Protocol::Hbft, 1), (Protocol::Fab, 1)] {
            let spec = ExploreSpec::new(p, 0, n).unwrap();
            let r = explore(&spec).unwrap();
            assert!(r.found().is_none(), "{p} n={n}");
            assert!(r.stats.states > 0);
        }
    }

    #[test]
    fn pool_is_ordered_and_bounded() {
        let spec = ExploreSpec::new(Protocol::Hbft, 1, 4).unwrap();
        let pool = byzantine_pool(&spec);
        // 2 prepares + 4 commits + 3 reports, each to 3 correct replicas
        assert_eq!(pool.len(), 27);
        assert!(matches!(pool[0].1, Payload::Prepare { .. }));
        assert!(matches!(&pool[26].1, Payload::ViewChange(r) if r.accepted.is_none()));
    }

    #[test]
    fn bounds_are_checked() {
        let mut spec = ExploreSpec::new(Protocol::Fab, 1, 6).unwrap();
        spec.max_steps = 0;
        assert!(explore(&spec).is_err());
        spec.max_steps = 3;
        spec.value_universe.clear();
        assert!(explore(&spec).is_err());
    }

    #[test]
    fn shallow_search_agrees_with_and_without_dedup() {
        let mut spec = ExploreSpec::new(Protocol::Hbft, 1, 4).unwrap();
        spec.max_steps = 5;
        spec.max_byz_messages = 3;
        let on = explore(&spec).unwrap();
        spec.dedup = false;
        let off = explore(&spec).unwrap();
        assert!(on.found().is_none() && off.found().is_none());
        assert!(on.stats.states <= off.stats.states);
    }
}
