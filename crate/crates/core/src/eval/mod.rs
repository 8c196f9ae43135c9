//! Trial generation, scoring harness and error-rate metrics.

mod human;
mod metrics;
mod trials;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Scorer};
use crate::corpus::EventType;
use crate::tvspace::SpeakerVector;

pub use human::{compute_der, compute_der_by_event, Der, HumanAnswer, HumanSession, HumanTrial};
pub use metrics::{compute_eer, DetPoint, EvalReport};
pub use trials::{gen_disguise_trials, gen_exhaustive_trials, gen_human_trials};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("event {event} has {got} utterances, need at least 2")]
    TooFewUtterances { event: EventType, got: usize },
    #[error("cannot build a {kind} trial for {event}: {reason}")]
    InsufficientData { event: EventType, kind: &'static str, reason: String },
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("no vector for utterance {0}")]
    MissingVector(String),
    #[error("score list needs both target and nontarget trials ({targets} targets, {nontargets} nontargets)")]
    SingleClass { targets: usize, nontargets: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("trial {0} is unanswered")]
    Unanswered(usize),
    #[error("trial {0} is already answered")]
    AlreadyAnswered(usize),
    #[error("trial index {index} out of range ({len} trials)")]
    NoSuchTrial { index: usize, len: usize },
    #[error("session has no counted trials")]
    NoCountedTrials,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trial {
    pub utt_a: String,
    pub utt_b: String,
    pub is_target: bool,
}

impl Trial {
    /// The pair in a canonical orientation.
    pub fn key(&self) -> (&str, &str) {
        if self.utt_a <= self.utt_b {
            (&self.utt_a, &self.utt_b)
        } else {
            (&self.utt_b, &self.utt_a)
        }
    }
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = if self.is_target { "target" } else { "nontarget" };
        write!(f, "{}\t{}\t{}", self.utt_a, self.utt_b, label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialList {
    pub event: EventType,
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.trials.iter().map(|t| t.is_target).collect()
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> EvalError {
    EvalError::Parse { line, reason: reason.into() }
}

/// Writes `utt_a<TAB>utt_b<TAB>target|nontarget` lines.
pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in trials {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let is_target = match f[2] {
            "target" => true,
            "nontarget" => false,
            other => return Err(parse_err(i + 1, format!("unknown trial label {other:?}"))),
        };
        if f[0] == f[1] {
            return Err(parse_err(i + 1, "trial pairs an utterance with itself"));
        }
        out.push(Trial { utt_a: f[0].to_string(), utt_b: f[1].to_string(), is_target });
    }
    Ok(out)
}

/// Writes `utt_a<TAB>utt_b<TAB>score` lines with round-trip precision.
pub fn write_scores(path: &Path, trials: &[Trial], scores: &[f64]) -> Result<(), EvalError> {
    if trials.len() != scores.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: trials.len() });
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (t, s) in trials.iter().zip(scores) {
        writeln!(w, "{}\t{}\t{}", t.utt_a, t.utt_b, s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, String, f64)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 fields, found {}", f.len())));
        }
        let s: f64 = f[2].parse().map_err(|_| parse_err(i + 1, format!("bad score {:?}", f[2])))?;
        out.push((f[0].to_string(), f[1].to_string(), s));
    }
    Ok(out)
}

/// Scores every trial with `scorer`. Each vector is prepared once; the
/// output is aligned with `trials`.
pub fn score_trials(
    trials: &[Trial],
    vectors: &HashMap<String, SpeakerVector>,
    scorer: &Scorer,
) -> Result<Vec<f64>, EvalError> {
    let mut needed: Vec<&str> = trials.iter().flat_map(|t| [t.utt_a.as_str(), t.utt_b.as_str()]).collect();
    needed.sort_unstable();
    needed.dedup();
    let prepared: HashMap<&str, SpeakerVector> = needed
        .par_iter()
        .map(|id| {
            let v = vectors.get(*id).ok_or_else(|| EvalError::MissingVector(id.to_string()))?;
            Ok((*id, scorer.prepare(v)?))
        })
        .collect::<Result<_, EvalError>>()?;
    trials
        .par_iter()
        .map(|t| {
            let s = scorer.score_prepared(&prepared[t.utt_a.as_str()], &prepared[t.utt_b.as_str()])?;
            if s.is_finite() {
                Ok(s)
            } else {
                Err(EvalError::NonFiniteScore(s))
            }
        })
        .collect()
}
