use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EvalError, Trial, TrialList};
use crate::corpus::EventType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanTrial {
    pub event: EventType,
    pub trial: Trial,
    /// Uncounted trials are imposter noise and never enter the DER.
    pub counted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanAnswer {
    /// The listener's verdict: same speaker or not.
    pub same: bool,
    pub answered_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanSession {
    pub session_id: String,
    pub trials: Vec<HumanTrial>,
    pub answers: Vec<Option<HumanAnswer>>,
    pub created_at_ms: u64,
}

impl HumanSession {
    pub fn new(session_id: impl Into<String>, trials: Vec<HumanTrial>, created_at_ms: u64) -> Self {
        let answers = vec![None; trials.len()];
        Self { session_id: session_id.into(), trials, answers, created_at_ms }
    }

    /// Counted trials built from per-event lists, in list order.
    pub fn from_lists(session_id: impl Into<String>, lists: &[TrialList], created_at_ms: u64) -> Self {
        let trials = lists
            .iter()
            .flat_map(|l| l.trials.iter().map(|t| HumanTrial { event: l.event, trial: t.clone(), counted: true }))
            .collect();
        Self::new(session_id, trials, created_at_ms)
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn answer(&mut self, index: usize, same: bool, at_ms: u64) -> Result<(), EvalError> {
        let len = self.trials.len();
        let slot = self.answers.get_mut(index).ok_or(EvalError::NoSuchTrial { index, len })?;
        if slot.is_some() {
            return Err(EvalError::AlreadyAnswered(index));
        }
        *slot = Some(HumanAnswer { same, answered_at_ms: at_ms });
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.answers.iter().all(Option::is_some)
    }

    pub fn first_unanswered(&self) -> Option<usize> {
        self.answers.iter().position(Option::is_none)
    }

    pub fn counted_complete(&self) -> bool {
        self.trials.iter().zip(&self.answers).all(|(t, a)| !t.counted || a.is_some())
    }

    pub fn n_counted(&self) -> usize {
        self.trials.iter().filter(|t| t.counted).count()
    }
}

/// Detection error count over counted trials, kept as integers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Der {
    pub false_alarms: u64,
    pub false_rejections: u64,
    pub total: u64,
}

impl Der {
    pub fn errors(&self) -> u64 {
        self.false_alarms + self.false_rejections
    }

    pub fn value(&self) -> f64 {
        self.errors() as f64 / self.total as f64
    }

    /// Pooled counts of two sessions (or events).
    pub fn combine(self, other: Der) -> Der {
        Der {
            false_alarms: self.false_alarms + other.false_alarms,
            false_rejections: self.false_rejections + other.false_rejections,
            total: self.total + other.total,
        }
    }

    fn add(&mut self, t: &HumanTrial, a: &HumanAnswer) {
        self.total += 1;
        match (t.trial.is_target, a.same) {
            (false, true) => self.false_alarms += 1,
            (true, false) => self.false_rejections += 1,
            _ => {}
        }
    }
}

impl fmt::Display for Der {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}% ({}/{})", 100.0 * self.value(), self.errors(), self.total)
    }
}

fn counted_answers(session: &HumanSession) -> Result<Vec<(&HumanTrial, &HumanAnswer)>, EvalError> {
    let mut out = Vec::new();
    for (i, (t, a)) in session.trials.iter().zip(&session.answers).enumerate() {
        if t.counted {
            out.push((t, a.as_ref().ok_or(EvalError::Unanswered(i))?));
        }
    }
    if out.is_empty() {
        return Err(EvalError::NoCountedTrials);
    }
    Ok(out)
}

/// (false alarms + false rejections) / counted trials. Every counted trial
/// must be answered; uncounted ones may be left open.
pub fn compute_der(session: &HumanSession) -> Result<Der, EvalError> {
    let mut der = Der::default();
    for (t, a) in counted_answers(session)? {
        der.add(t, a);
    }
    Ok(der)
}

pub fn compute_der_by_event(session: &HumanSession) -> Result<BTreeMap<EventType, Der>, EvalError> {
    let mut map: BTreeMap<EventType, Der> = BTreeMap::new();
    for (t, a) in counted_answers(session)? {
        map.entry(t.event).or_insert(Der::default()).add(t, a);
    }
    Ok(map)
}
