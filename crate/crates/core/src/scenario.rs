//! Scenario files: a cluster, the initial proposals, Byzantine scripts and a
//! delivery schedule, all in one JSON document.
//!
//! ```json
//! {
//!   "schema": "consensus-lab/scenario/v1",
//!   "protocol": "hbft", "f": 1, "n_replicas": 4, "byzantine": [0],
//!   "primary_map": {"1": 0, "2": 1},
//!   "seq": 1,
//!   "initial_proposals": [{"view": 1, "value": "a", "to": [1, 2]}],
//!   "schedule": [{"hold": {"kind": "commit"}}, "flush", {"timeout": {"replica": 1, "view": 1, "seq": 1}}],
//!   "scripts": []
//! }
//! ```
//!
//! A proposal for a view whose primary is correct is what that primary
//! proposes: in the initial view it is sent at start, in later views it is
//! the fresh value used when the progress certificate leaves the choice open.
//! A proposal for a view whose primary is Byzantine is sent verbatim as a
//! PREPARE to `to` (all other replicas by default), which is how
//! equivocation is written down.
//!
//! Messages left deliverable after the last directive are flushed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{ByzantineScript, ScriptError, Trigger};
use crate::message::{Message, Payload};
use crate::net::{Selector, SimError};
use crate::sim::{SimOptions, Simulation, Trace, DEFAULT_STEP_LIMIT};
use crate::types::{primary_of, Config, ConfigError, Protocol, ReplicaId, SeqNum, Value, View};

pub const SCHEMA: &str = "consensus-lab/scenario/v1";
pub const STEP_LIMIT_ENV: &str = "CONSENSUS_LAB_STEP_LIMIT";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    pub view: View,
    pub value: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Vec<ReplicaId>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeoutAt {
    pub replica: ReplicaId,
    pub view: View,
    pub seq: SeqNum,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryAt {
    pub replica: ReplicaId,
    pub action: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    /// Deliver the single in-flight message the selector matches.
    Deliver(Selector),
    /// Hold matching messages, including ones sent later.
    Hold(Selector),
    /// Lift a hold with the identical selector and release what it matches.
    Release(Selector),
    Timeout(TimeoutAt),
    /// Run a `manual` script action.
    Adversary(AdversaryAt),
    /// Deliver everything deliverable.
    Flush,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub protocol: Protocol,
    pub f: usize,
    pub n_replicas: usize,
    #[serde(default)]
    pub byzantine: Vec<ReplicaId>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub primary_map: BTreeMap<View, ReplicaId>,
    pub seq: SeqNum,
    #[serde(default)]
    pub initial_proposals: Vec<Proposal>,
    #[serde(default)]
    pub schedule: Vec<Directive>,
    #[serde(default)]
    pub scripts: Vec<ByzantineScript>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}, column {column}, at `{field}`: {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("`schema` must be {SCHEMA:?}, found {0:?}")]
    Schema(String),
    #[error("invalid cluster: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid script: {0}")]
    Script(#[from] ScriptError),
    #[error("`{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("`schedule[{index}]`: selector matches {matches} in-flight messages, expected exactly 1")]
    Unresolved { index: usize, matches: usize },
    #[error("`schedule[{index}]`: {source}")]
    Runtime { index: usize, source: SimError },
    #[error("setup: {0}")]
    Setup(SimError),
    #[error("{STEP_LIMIT_ENV}: {0}")]
    StepLimit(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Step cap from the environment, or the default.
pub fn step_limit_from_env() -> Result<u64, ScenarioError> {
    match std::env::var(STEP_LIMIT_ENV) {
        Err(_) => Ok(DEFAULT_STEP_LIMIT),
        Ok(s) => match s.trim().parse::<u64>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ScenarioError::StepLimit(format!(
                "expected a positive integer, got {s:?}"
            ))),
        },
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let parsed: Result<ScenarioFile, _> = serde_path_to_error::deserialize(de);
        let scenario = parsed.map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        if scenario.schema != SCHEMA {
            return Err(ScenarioError::Schema(scenario.schema));
        }
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Checks everything that can be checked before running and returns the
    /// cluster configuration.
    pub fn validate(&self) -> Result<Config, ScenarioError> {
        if self.schema != SCHEMA {
            return Err(ScenarioError::Schema(self.schema.clone()));
        }
        let config = Config::new(
            self.protocol,
            self.f,
            self.n_replicas,
            self.byzantine.iter().copied(),
        )?
        .with_primaries(self.primary_map.iter().map(|(v, r)| (*v, *r)))?;
        if let Some(v) = self.primary_map.keys().find(|v| v.0 == 0) {
            return Err(invalid(format!("primary_map.{}", v.0), "views start at 1"));
        }

        let mut scripted = BTreeSet::new();
        for s in &self.scripts {
            if !scripted.insert(s.replica) {
                return Err(ScriptError::DuplicateScript(s.replica).into());
            }
            s.validate(&config)?;
        }

        let mut correct_views = BTreeSet::new();
        for (i, p) in self.initial_proposals.iter().enumerate() {
            let field = format!("initial_proposals[{i}]");
            if p.value.is_null() {
                return Err(invalid(format!("{field}.value"), "NULL cannot be proposed"));
            }
            if p.view.0 == 0 {
                return Err(invalid(format!("{field}.view"), "views start at 1"));
            }
            if let Some(bad) = p.to.iter().flatten().find(|r| !config.is_valid_replica(**r)) {
                return Err(invalid(
                    format!("{field}.to"),
                    format!("unknown replica {}", bad.0),
                ));
            }
            let primary = primary_of(p.view, &config);
            if !config.is_byzantine(primary) {
                if p.to.is_some() {
                    return Err(invalid(
                        format!("{field}.to"),
                        format!(
                            "the primary of {} is correct and always sends to everyone",
                            p.view
                        ),
                    ));
                }
                if !correct_views.insert(p.view) {
                    return Err(invalid(
                        field,
                        format!(
                            "a correct primary proposes once; {} already has a proposal",
                            p.view
                        ),
                    ));
                }
            }
        }

        for (i, d) in self.schedule.iter().enumerate() {
            let field = format!("schedule[{i}]");
            match d {
                Directive::Timeout(t) => {
                    if !config.is_valid_replica(t.replica) {
                        return Err(invalid(field, format!("unknown replica {}", t.replica.0)));
                    }
                }
                Directive::Adversary(a) => {
                    let script = self.scripts.iter().find(|s| s.replica == a.replica);
                    let manual = script.and_then(|s| s.actions.iter().find(|x| x.id == a.action));
                    match manual {
                        Some(x) if x.trigger == Trigger::Manual => {}
                        Some(_) => {
                            return Err(invalid(
                                field,
                                format!("action {:?} is not a manual action", a.action),
                            ))
                        }
                        None => {
                            return Err(invalid(
                                field,
                                format!("{} has no scripted action {:?}", a.replica, a.action),
                            ))
                        }
                    }
                }
                Directive::Deliver(s) | Directive::Hold(s) | Directive::Release(s) => {
                    if let Some(bad) = s.from.iter().chain(&s.to).find(|r| !config.is_valid_replica(**r)) {
                        return Err(invalid(field, format!("unknown replica {}", bad.0)));
                    }
                }
                Directive::Flush => {}
            }
        }
        Ok(config)
    }
}

/// Outcome of running a scenario.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: Config,
    pub trace: Trace,
    /// Replica states at the end of the run.
    pub simulation: Simulation,
}

/// Runs a scenario with the step cap taken from the environment.
pub fn run_scenario(scenario: &ScenarioFile) -> Result<Run, ScenarioError> {
    run_scenario_with(scenario, step_limit_from_env()?)
}

pub fn run_scenario_with(scenario: &ScenarioFile, step_limit: u64) -> Result<Run, ScenarioError> {
    let config = scenario.validate()?;
    let seq = scenario.seq;

    let mut opening = None;
    let mut fresh = Vec::new();
    let mut byzantine_prepares = Vec::new();
    for p in &scenario.initial_proposals {
        let primary = primary_of(p.view, &config);
        if config.is_byzantine(primary) {
            byzantine_prepares.push((primary, p));
        } else if p.view == View::INITIAL {
            opening = Some(p.value.clone());
        } else {
            fresh.push((p.view, p.value.clone()));
        }
    }

    let options = SimOptions {
        step_limit,
        ..SimOptions::default()
    };
    let mut sim = Simulation::new(config.clone(), seq, &fresh, options);
    for s in &scenario.scripts {
        sim.set_script(s.clone());
    }

    for (primary, p) in byzantine_prepares {
        let to: Vec<ReplicaId> = match &p.to {
            Some(to) => to.clone(),
            None => config.replicas().filter(|r| *r != primary).collect(),
        };
        for r in to {
            let message = Message {
                sender: primary,
                payload: Payload::Prepare {
                    view: p.view,
                    seq,
                    value: p.value.clone(),
                },
            };
            sim.send(primary, r, message).map_err(ScenarioError::Setup)?;
        }
    }
    sim.start(opening).map_err(ScenarioError::Setup)?;

    for (index, d) in scenario.schedule.iter().enumerate() {
        if sim.step_limit_exceeded() {
            break;
        }
        let at = |source| ScenarioError::Runtime { index, source };
        match d {
            Directive::Deliver(sel) => {
                let ids = sim.network().select(sel);
                if ids.len() != 1 {
                    return Err(ScenarioError::Unresolved {
                        index,
                        matches: ids.len(),
                    });
                }
                sim.deliver(ids[0]).map_err(at)?;
            }
            Directive::Hold(sel) => {
                sim.network_mut().hold_matching(sel.clone());
            }
            Directive::Release(sel) => {
                let now = sim.clock();
                sim.network_mut().release_matching(sel, now);
            }
            Directive::Timeout(t) => {
                sim.fire_timeout(t.replica, t.view, t.seq).map_err(at)?;
            }
            Directive::Adversary(a) => {
                sim.adversary_action(a.replica, &a.action).map_err(at)?;
            }
            Directive::Flush => sim.flush().map_err(at)?,
        }
    }
    if !sim.step_limit_exceeded() {
        sim.flush().map_err(|source| ScenarioError::Runtime {
            index: scenario.schedule.len(),
            source,
        })?;
    }
    let trace = sim.clone().into_trace();
    Ok(Run {
        config,
        trace,
        simulation: sim,
    })
}
