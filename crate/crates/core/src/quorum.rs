//! Exhaustive quorum-intersection check.
//!
//! A value `m` is committed by a quorum `C`. A later progress certificate is
//! any set of reports from a certificate-sized subset `R` of the cluster.
//! Correct members of `C` report `m`. Correct replicas outside `C` and all
//! Byzantine replicas may report `m`, a rival `m'`, or nothing. For every
//! such certificate the new primary must still be forced to keep `m`.
//!
//! FaB (`5f+1` replicas, quorums of `4f+1`) passes when `m` has at least
//! `2f+1` votes and `m'` is never vouched for. The same enumeration with
//! hBFT parameters (`3f+1` replicas, quorums and certificates of `2f+1`,
//! selection threshold `f+1`) reports every certificate whose selection is
//! not `m`. There, one correct member of `C` holds the commit certificate
//! and is the only reporter that can carry it.

use std::fmt;

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

use crate::fab::fab_vouches;
use crate::hbft::hbft_select_value;
use crate::message::{Accepted, CommitCertificate, ProgressCertificate, SignedReport, ViewChangeReport};
use crate::types::{Config, Protocol, ReplicaId, SeqNum, Value, View};

/// Largest `f` the enumeration accepts.
pub const MAX_QUORUM_F: usize = 2;

/// Header printed with every report.
pub const REDUCTION_NOTE: &str = "values are drawn from {m, m', empty}: selection and vouching \
depend only on which reports carry equal values, so two labels plus empty cover every \
partition a certificate can take";

/// Number of witnesses kept in a report; the total is always counted.
const KEPT_WITNESSES: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuorumError {
    #[error("f={0} is too large for exhaustive enumeration (at most {MAX_QUORUM_F})")]
    TooLarge(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CertEntry {
    pub replica: ReplicaId,
    pub vote: Value,
    /// The report carries a commit certificate for `m`.
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    pub case_index: u64,
    pub byzantine: Vec<ReplicaId>,
    pub committed: Vec<ReplicaId>,
    pub committer: Option<ReplicaId>,
    pub certificate: Vec<CertEntry>,
    /// What the new primary ends up with instead of keeping `m`.
    pub outcome: String,
}

impl Counterexample {
    /// Votes for (m, m', empty) in the certificate.
    pub fn partition(&self) -> (usize, usize, usize) {
        let m = Value::new(M);
        let rival = Value::new(RIVAL);
        let count = |v: &Value| self.certificate.iter().filter(|e| &e.vote == v).count();
        (count(&m), count(&rival), count(&Value::NULL))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QuorumReport {
    pub protocol: Protocol,
    pub f: usize,
    pub n: usize,
    pub commit_quorum: usize,
    pub certificate_size: usize,
    pub cases_checked: u64,
    pub counterexamples: u64,
    /// The first few counterexamples in enumeration order.
    pub witnesses: Vec<Counterexample>,
}

impl QuorumReport {
    pub fn first_witness(&self) -> Option<&Counterexample> {
        self.witnesses.first()
    }
}

impl fmt::Display for QuorumReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# reduction: {REDUCTION_NOTE}")?;
        writeln!(
            f,
            "{}: f={} n={} commit quorum={} certificate={} cases={} counterexamples={}",
            self.protocol,
            self.f,
            self.n,
            self.commit_quorum,
            self.certificate_size,
            self.cases_checked,
            self.counterexamples
        )?;
        if let Some(w) = self.first_witness() {
            let (m, r, e) = w.partition();
            let cert = w
                .certificate
                .iter()
                .map(|c| {
                    let star = if c.certified { "*" } else { "" };
                    format!("{}:{}{star}", c.replica, label(&c.vote))
                })
                .join(", ");
            let byz = w.byzantine.iter().join(",");
            let com = w.committed.iter().join(",");
            writeln!(
                f,
                "  first witness #{}: byzantine={{{byz}}} committed={{{com}}} certificate={{{cert}}} \
                 partition={{{m}×m, {r}×m', {e}×empty}} -> {}",
                w.case_index, w.outcome
            )?;
        }
        Ok(())
    }
}

const M: &str = "m";
const RIVAL: &str = "m'";

fn label(v: &Value) -> String {
    v.label().map_or_else(|| "empty".to_string(), str::to_string)
}

/// The FaB check: every certificate keeps at least `2f+1` votes for `m` and
/// never vouches for `m'`.
pub fn check_fab_quorum_intersection(f: usize) -> Result<QuorumReport, QuorumError> {
    enumerate(Protocol::Fab, f)
}

/// The same enumeration under hBFT's parameters.
pub fn check_hbft_quorum_contrast(f: usize) -> Result<QuorumReport, QuorumError> {
    enumerate(Protocol::Hbft, f)
}

fn enumerate(protocol: Protocol, f: usize) -> Result<QuorumReport, QuorumError> {
    if f > MAX_QUORUM_F {
        return Err(QuorumError::TooLarge(f));
    }
    let n = protocol.min_replicas(f);
    let (quorum, cert_size) = match protocol {
        Protocol::Hbft => (2 * f + 1, 2 * f + 1),
        Protocol::Fab => (n - f, n - f),
    };
    let seq = SeqNum::new(1).expect("positive");
    let m = Value::new(M);
    let rival = Value::new(RIVAL);
    let choices = [m.clone(), rival.clone(), Value::NULL];
    let ids: Vec<ReplicaId> = (0..n as u16).map(ReplicaId).collect();

    let mut report = QuorumReport {
        protocol,
        f,
        n,
        commit_quorum: quorum,
        certificate_size: cert_size,
        cases_checked: 0,
        counterexamples: 0,
        witnesses: Vec::new(),
    };

    for b_size in 0..=f {
        for byzantine in ids.iter().copied().combinations(b_size) {
            let config = Config::new(protocol, f, n, byzantine.iter().copied())
                .expect("enumerated configuration is valid");
            for committed in ids.iter().copied().combinations(quorum) {
                let committers: Vec<Option<ReplicaId>> = match protocol {
                    Protocol::Fab => vec![None],
                    Protocol::Hbft => committed
                        .iter()
                        .filter(|r| !config.is_byzantine(**r))
                        .map(|r| Some(*r))
                        .collect(),
                };
                let cc = CommitCertificate {
                    view: View(1),
                    seq,
                    value: m.clone(),
                    attestations: committed.clone(),
                };
                for committer in committers {
                    for reporters in ids.iter().copied().combinations(cert_size) {
                        // reporters whose vote the adversary controls
                        let free: Vec<usize> = reporters
                            .iter()
                            .enumerate()
                            .filter(|(_, r)| config.is_byzantine(**r) || !committed.contains(r))
                            .map(|(i, _)| i)
                            .collect();
                        let combos = 3u64.pow(free.len() as u32);
                        for code in 0..combos {
                            let mut votes = vec![m.clone(); reporters.len()];
                            let mut rest = code;
                            for &i in free.iter().rev() {
                                votes[i] = choices[(rest % 3) as usize].clone();
                                rest /= 3;
                            }
                            let certificate: Vec<CertEntry> = reporters
                                .iter()
                                .zip(votes)
                                .map(|(r, vote)| CertEntry {
                                    replica: *r,
                                    vote,
                                    certified: Some(*r) == committer,
                                })
                                .collect();
                            let pc = progress_certificate(&certificate, &cc, seq);
                            let outcome = match protocol {
                                Protocol::Fab => {
                                    let count = certificate.iter().filter(|e| e.vote == m).count();
                                    let vouched = fab_vouches(&pc, &rival, &config)
                                        .expect("enumerated certificate is well formed");
                                    if vouched {
                                        Some("m' is vouched for".to_string())
                                    } else if count < 2 * f + 1 {
                                        Some(format!("only {count} votes for m"))
                                    } else {
                                        None
                                    }
                                }
                                Protocol::Hbft => {
                                    let selected = hbft_select_value(&pc, &config)
                                        .expect("enumerated certificate is well formed");
                                    (selected != m).then(|| format!("selects {}", label(&selected)))
                                }
                            };
                            let index = report.cases_checked;
                            report.cases_checked += 1;
                            if let Some(outcome) = outcome {
                                report.counterexamples += 1;
                                if report.witnesses.len() < KEPT_WITNESSES {
                                    report.witnesses.push(Counterexample {
                                        case_index: index,
                                        byzantine: byzantine.clone(),
                                        committed: committed.clone(),
                                        committer,
                                        certificate,
                                        outcome,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

fn progress_certificate(entries: &[CertEntry], cc: &CommitCertificate, seq: SeqNum) -> ProgressCertificate {
    ProgressCertificate {
        new_view: View(2),
        seq,
        reports: entries
            .iter()
            .map(|e| SignedReport {
                replica: e.replica,
                report: ViewChangeReport {
                    new_view: View(2),
                    seq,
                    accepted: (!e.vote.is_null()).then(|| Accepted::new(View(1), e.vote.clone())),
                    commit_cert: e.certified.then(|| cc.clone()),
                },
            })
            .collect(),
    }
}
