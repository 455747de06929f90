//! Identities, views, values and cluster configuration shared by every
//! protocol state machine, the simulator and the checker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 0-based replica index. The display name `i{k}` is `ReplicaId(k - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u16);

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0 + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct View(pub u64);

impl View {
    /// Every run starts in view 1.
    pub const INITIAL: View = View(1);

    pub fn next(self) -> View {
        View(self.0 + 1)
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct SeqNum(u64);

impl SeqNum {
    pub fn new(n: u64) -> Option<SeqNum> {
        (n > 0).then_some(SeqNum(n))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for SeqNum {
    type Error = String;

    fn try_from(n: u64) -> Result<Self, Self::Error> {
        SeqNum::new(n).ok_or_else(|| "sequence numbers start at 1".to_string())
    }
}

impl From<SeqNum> for u64 {
    fn from(s: SeqNum) -> u64 {
        s.0
    }
}

impl fmt::Display for SeqNum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// An opaque proposal label. `Value::NULL` is the reserved no-op value and
/// serializes as JSON `null`; ordering places it before every label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value(Option<String>);

impl Value {
    pub const NULL: Value = Value(None);

    pub fn new(label: impl Into<String>) -> Value {
        Value(Some(label.into()))
    }

    pub fn is_null(&self) -> bool {
        self.0.is_none()
    }

    pub fn label(&self) -> Option<&str> {
        self.0.as_deref()
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Some(l) => f.write_str(l),
            None => f.write_str("NULL"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Hbft,
    Fab,
}

impl Protocol {
    /// Smallest cluster the protocol claims to tolerate `f` faults with.
    pub fn min_replicas(self, f: usize) -> usize {
        match self {
            Protocol::Hbft => 3 * f + 1,
            Protocol::Fab => min_replicas_two_step(f),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Hbft => "hbft",
            Protocol::Fab => "fab",
        })
    }
}

/// Lower bound on cluster size for any consensus protocol that commits in two
/// message steps while tolerating `f` Byzantine replicas: a commit waits for
/// `A - f` replies, and a later certificate of `A - f` reports may hold up to
/// `2f` votes for a rival value, so `A - f = 2f + 2f + 1`.
pub fn min_replicas_two_step(f: usize) -> usize {
    5 * f + 1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{protocol} with f={f} needs at least {min} replicas, got {n}")]
    TooFewReplicas {
        protocol: Protocol,
        f: usize,
        n: usize,
        min: usize,
    },
    #[error("{count} Byzantine replicas exceed the fault budget f={f}")]
    TooManyByzantine { count: usize, f: usize },
    #[error("replica {0} is outside the cluster")]
    UnknownReplica(u16),
    #[error("cluster size {0} is not representable")]
    ClusterTooLarge(usize),
}

/// Validated cluster configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Config {
    f: usize,
    n: usize,
    protocol: Protocol,
    byzantine: BTreeSet<ReplicaId>,
    primaries: BTreeMap<View, ReplicaId>,
}

impl Config {
    pub fn new(
        protocol: Protocol,
        f: usize,
        n: usize,
        byzantine: impl IntoIterator<Item = ReplicaId>,
    ) -> Result<Config, ConfigError> {
        let min = protocol.min_replicas(f);
        if n < min || n == 0 {
            return Err(ConfigError::TooFewReplicas { protocol, f, n, min });
        }
        if n > u16::MAX as usize {
            return Err(ConfigError::ClusterTooLarge(n));
        }
        let byzantine: BTreeSet<ReplicaId> = byzantine.into_iter().collect();
        if let Some(bad) = byzantine.iter().find(|r| r.index() >= n) {
            return Err(ConfigError::UnknownReplica(bad.0));
        }
        if byzantine.len() > f {
            return Err(ConfigError::TooManyByzantine {
                count: byzantine.len(),
                f,
            });
        }
        Ok(Config {
            f,
            n,
            protocol,
            byzantine,
            primaries: BTreeMap::new(),
        })
    }

    /// Pins the primary of specific views, overriding round-robin rotation.
    pub fn with_primaries(
        mut self,
        primaries: impl IntoIterator<Item = (View, ReplicaId)>,
    ) -> Result<Config, ConfigError> {
        for (view, r) in primaries {
            if r.index() >= self.n {
                return Err(ConfigError::UnknownReplica(r.0));
            }
            self.primaries.insert(view, r);
        }
        Ok(self)
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn byzantine(&self) -> &BTreeSet<ReplicaId> {
        &self.byzantine
    }

    pub fn primary_overrides(&self) -> &BTreeMap<View, ReplicaId> {
        &self.primaries
    }

    pub fn is_byzantine(&self, r: ReplicaId) -> bool {
        self.byzantine.contains(&r)
    }

    pub fn is_valid_replica(&self, r: ReplicaId) -> bool {
        r.index() < self.n
    }

    pub fn replicas(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        (0..self.n as u16).map(ReplicaId)
    }

    pub fn correct_replicas(&self) -> impl Iterator<Item = ReplicaId> + '_ {
        self.replicas().filter(|r| !self.is_byzantine(*r))
    }

    /// Attestations needed for a commit certificate: `2f + 1` in hBFT,
    /// `N - f` in FaB.
    pub fn commit_quorum(&self) -> usize {
        match self.protocol {
            Protocol::Hbft => 2 * self.f + 1,
            Protocol::Fab => self.n - self.f,
        }
    }

    /// View-change reports a new primary needs before proposing.
    pub fn progress_quorum(&self) -> usize {
        match self.protocol {
            Protocol::Hbft => 2 * self.f + 1,
            Protocol::Fab => self.n - self.f,
        }
    }
}

/// Primary of `view`: the configured override if any, else `view mod n`.
pub fn primary_of(view: View, config: &Config) -> ReplicaId {
    if let Some(r) = config.primaries.get(&view) {
        return *r;
    }
    ReplicaId((view.0 % config.n as u64) as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(protocol: Protocol, f: usize, n: usize) -> Config {
        Config::new(protocol, f, n, []).unwrap()
    }

    #[test]
    fn round_robin_primary() {
        let c = cfg(Protocol::Hbft, 1, 4);
        assert_eq!(primary_of(View(1), &c), ReplicaId(1));
        assert_eq!(primary_of(View(0), &c), ReplicaId(0));
        assert_eq!(primary_of(View(6), &c), ReplicaId(2));
        for n in 1..8 {
            let c = cfg(Protocol::Hbft, 0, n);
            assert_eq!(primary_of(View(0), &c), ReplicaId(0));
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let c = cfg(Protocol::Hbft, 1, 4)
            .with_primaries([(View(1), ReplicaId(0)), (View(2), ReplicaId(1))])
            .unwrap();
        assert_eq!(primary_of(View(1), &c), ReplicaId(0));
        assert_eq!(primary_of(View(2), &c), ReplicaId(1));
        assert_eq!(primary_of(View(3), &c), ReplicaId(3));
        assert!(cfg(Protocol::Hbft, 1, 4)
            .with_primaries([(View(1), ReplicaId(4))])
            .is_err());
    }

    #[test]
    fn two_step_bound() {
        assert_eq!(min_replicas_two_step(0), 1);
        assert_eq!(min_replicas_two_step(1), 6);
        assert_eq!(min_replicas_two_step(2), 11);
    }

    #[test]
    fn config_rejects_undersized_clusters() {
        assert!(Config::new(Protocol::Hbft, 1, 4, []).is_ok());
        assert!(matches!(
            Config::new(Protocol::Hbft, 1, 3, []),
            Err(ConfigError::TooFewReplicas { min: 4, .. })
        ));
        assert!(Config::new(Protocol::Fab, 1, 6, []).is_ok());
        assert!(matches!(
            Config::new(Protocol::Fab, 1, 4, []),
            Err(ConfigError::TooFewReplicas { min: 6, .. })
        ));
        assert_eq!(
            Config::new(Protocol::Hbft, 1, 4, [ReplicaId(0), ReplicaId(1)]),
            Err(ConfigError::TooManyByzantine { count: 2, f: 1 })
        );
        assert_eq!(
            Config::new(Protocol::Hbft, 1, 4, [ReplicaId(7)]),
            Err(ConfigError::UnknownReplica(7))
        );
    }

    #[test]
    fn quorum_sizes() {
        assert_eq!(cfg(Protocol::Hbft, 1, 4).commit_quorum(), 3);
        assert_eq!(cfg(Protocol::Fab, 1, 6).commit_quorum(), 5);
        assert_eq!(cfg(Protocol::Fab, 1, 6).progress_quorum(), 5);
        assert_eq!(cfg(Protocol::Fab, 2, 11).commit_quorum(), 9);
    }

    #[test]
    fn value_serde_and_order() {
        assert_eq!(serde_json::to_string(&Value::NULL).unwrap(), "null");
        assert_eq!(serde_json::to_string(&Value::new("a")).unwrap(), "\"a\"");
        assert!(Value::NULL < Value::new("a"));
        assert!(Value::new("a") < Value::new("b"));
        assert!(serde_json::from_str::<SeqNum>("0").is_err());
        assert_eq!(ReplicaId(2).to_string(), "i3");
    }
}
