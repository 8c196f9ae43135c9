use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use tev_core::corpus::{CorpusManifest, EventType};
use tev_core::eval::{compute_der, compute_der_by_event, Der, HumanSession, HumanTrial};

use crate::session::{build_trials, Protocol, SessionConfig};
use crate::ListenError;

/// One line of the append-only session log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogEvent {
    Create { session_id: String, config: SessionConfig, created_at_ms: u64, trials: Vec<HumanTrial>, tokens: Vec<[String; 2]> },
    Answer { session_id: String, index: usize, same: bool, at_ms: u64 },
    Play { token: String },
    Finalize { session_id: String, at_ms: u64 },
}

/// What a listener sees of one trial: no utterance or speaker ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub index: usize,
    pub n_trials: usize,
    pub event: EventType,
    pub audio_a: String,
    pub audio_b: String,
    pub answered: bool,
    pub plays: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub protocol: Protocol,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub index: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerView {
    pub false_alarms: u64,
    pub false_rejections: u64,
    pub errors: u64,
    pub total: u64,
    pub der: f64,
}

impl From<Der> for DerView {
    fn from(d: Der) -> Self {
        Self {
            false_alarms: d.false_alarms,
            false_rejections: d.false_rejections,
            errors: d.errors(),
            total: d.total,
            der: d.value(),
        }
    }
}

impl DerView {
    pub fn counts(&self) -> Der {
        Der { false_alarms: self.false_alarms, false_rejections: self.false_rejections, total: self.total }
    }
}

/// Full disclosure of one trial, available only after finalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub event: EventType,
    pub utt_a: String,
    pub utt_b: String,
    pub is_target: bool,
    pub counted: bool,
    pub same: Option<bool>,
    pub plays: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub protocol: Protocol,
    pub overall: DerView,
    pub per_event: BTreeMap<EventType, DerView>,
    pub trials: Vec<TrialOutcome>,
}

/// Pooled DER over several sessions: total errors over total counted trials.
pub fn aggregate_der(reports: &[SessionReport]) -> Der {
    reports.iter().fold(Der::default(), |acc, r| acc.combine(r.overall.counts()))
}

struct SessionState {
    config: SessionConfig,
    session: HumanSession,
    tokens: Vec<[String; 2]>,
    plays: Vec<[u32; 2]>,
    finalized: bool,
}

impl SessionState {
    fn report(&self) -> Result<SessionReport, ListenError> {
        let der = |e| ListenError::Incomplete(format!("{e}"));
        let overall = compute_der(&self.session).map_err(der)?;
        let per_event = compute_der_by_event(&self.session).map_err(der)?;
        let trials = self
            .session
            .trials
            .iter()
            .zip(&self.session.answers)
            .zip(&self.plays)
            .enumerate()
            .map(|(index, ((t, a), plays))| TrialOutcome {
                index,
                event: t.event,
                utt_a: t.trial.utt_a.clone(),
                utt_b: t.trial.utt_b.clone(),
                is_target: t.trial.is_target,
                counted: t.counted,
                same: a.map(|a| a.same),
                plays: *plays,
            })
            .collect();
        Ok(SessionReport {
            session_id: self.session.session_id.clone(),
            protocol: self.config.protocol,
            overall: overall.into(),
            per_event: per_event.into_iter().map(|(e, d)| (e, d.into())).collect(),
            trials,
        })
    }
}

#[derive(Default)]
struct State {
    sessions: HashMap<String, SessionState>,
    /// token -> (session, trial, side)
    tokens: HashMap<String, (String, usize, usize)>,
}

impl State {
    fn apply(&mut self, ev: &LogEvent) -> Result<(), ListenError> {
        match ev {
            LogEvent::Create { session_id, config, created_at_ms, trials, tokens } => {
                for (k, pair) in tokens.iter().enumerate() {
                    for (side, tok) in pair.iter().enumerate() {
                        self.tokens.insert(tok.clone(), (session_id.clone(), k, side));
                    }
                }
                let session = HumanSession::new(session_id.clone(), trials.clone(), *created_at_ms);
                let plays = vec![[0, 0]; trials.len()];
                self.sessions.insert(
                    session_id.clone(),
                    SessionState { config: config.clone(), session, tokens: tokens.clone(), plays, finalized: false },
                );
            }
            LogEvent::Answer { session_id, index, same, at_ms } => {
                let s = self.session_mut(session_id)?;
                s.session.answer(*index, *same, *at_ms).map_err(|e| ListenError::Conflict(e.to_string()))?;
            }
            LogEvent::Play { token } => {
                let (sid, k, side) = self.tokens.get(token).cloned().ok_or(ListenError::UnknownToken)?;
                self.session_mut(&sid)?.plays[k][side] += 1;
            }
            LogEvent::Finalize { session_id, .. } => {
                self.session_mut(session_id)?.finalized = true;
            }
        }
        Ok(())
    }

    fn session(&self, id: &str) -> Result<&SessionState, ListenError> {
        self.sessions.get(id).ok_or_else(|| ListenError::UnknownSession(id.to_string()))
    }

    fn session_mut(&mut self, id: &str) -> Result<&mut SessionState, ListenError> {
        self.sessions.get_mut(id).ok_or_else(|| ListenError::UnknownSession(id.to_string()))
    }
}

/// Session store backed by an append-only newline-delimited JSON log.
/// Every mutation is written and flushed to the log before it is applied
/// and acknowledged; reopening the log replays it.
pub struct ListenService {
    manifest: CorpusManifest,
    log_path: PathBuf,
    inner: Mutex<(State, File)>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl ListenService {
    pub fn open(manifest: CorpusManifest, log_path: &Path) -> Result<Self, ListenError> {
        let mut state = State::default();
        if log_path.exists() {
            let reader = BufReader::new(File::open(log_path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: LogEvent = serde_json::from_str(&line)
                    .map_err(|e| ListenError::CorruptLog { line: i + 1, reason: e.to_string() })?;
                state.apply(&ev).map_err(|e| ListenError::CorruptLog { line: i + 1, reason: e.to_string() })?;
            }
        } else if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(log_path)?;
        Ok(Self { manifest, log_path: log_path.to_path_buf(), inner: Mutex::new((state, file)) })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn commit(state: &mut State, file: &mut File, ev: LogEvent) -> Result<(), ListenError> {
        let mut line = serde_json::to_string(&ev).expect("log events serialize");
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        state.apply(&ev)
    }

    pub fn create_session(&self, config: SessionConfig) -> Result<SessionCreated, ListenError> {
        let trials = build_trials(&config, &self.manifest)?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let tokens: Vec<[String; 2]> = trials
            .iter()
            .map(|_| [uuid::Uuid::new_v4().simple().to_string(), uuid::Uuid::new_v4().simple().to_string()])
            .collect();
        let created = SessionCreated { session_id: session_id.clone(), protocol: config.protocol, n_trials: trials.len() };
        let mut guard = self.inner.lock().unwrap();
        let (state, file) = &mut *guard;
        Self::commit(state, file, LogEvent::Create { session_id, config, created_at_ms: now_ms(), trials, tokens })?;
        Ok(created)
    }

    pub fn trial(&self, session_id: &str, index: usize) -> Result<TrialView, ListenError> {
        let guard = self.inner.lock().unwrap();
        let s = guard.0.session(session_id)?;
        let t = s.session.trials.get(index).ok_or(ListenError::UnknownTrial { index, len: s.session.len() })?;
        Ok(TrialView {
            index,
            n_trials: s.session.len(),
            event: t.event,
            audio_a: format!("/audio/{}", s.tokens[index][0]),
            audio_b: format!("/audio/{}", s.tokens[index][1]),
            answered: s.session.answers[index].is_some(),
            plays: s.plays[index],
        })
    }

    /// WAV bytes behind an audio token; each fetch is logged as a play.
    pub fn audio(&self, token: &str) -> Result<Vec<u8>, ListenError> {
        let path = {
            let mut guard = self.inner.lock().unwrap();
            let (state, file) = &mut *guard;
            let (sid, k, side) = state.tokens.get(token).cloned().ok_or(ListenError::UnknownToken)?;
            let t = &state.session(&sid)?.session.trials[k].trial;
            let utt = if side == 0 { &t.utt_a } else { &t.utt_b };
            let rec = self.manifest.get(utt).ok_or(ListenError::UnknownToken)?;
            let path = self.manifest.resolve(rec);
            Self::commit(state, file, LogEvent::Play { token: token.to_string() })?;
            path
        };
        Ok(fs::read(path)?)
    }

    pub fn answer(&self, session_id: &str, index: usize, same: bool) -> Result<AnswerAck, ListenError> {
        let mut guard = self.inner.lock().unwrap();
        let (state, file) = &mut *guard;
        let s = state.session(session_id)?;
        if s.finalized {
            return Err(ListenError::Conflict("session is already finalized".into()));
        }
        let len = s.session.len();
        match s.session.answers.get(index) {
            None => return Err(ListenError::UnknownTrial { index, len }),
            Some(Some(_)) => return Err(ListenError::Duplicate(index)),
            Some(None) => {}
        }
        let ev = LogEvent::Answer { session_id: session_id.to_string(), index, same, at_ms: now_ms() };
        Self::commit(state, file, ev)?;
        let s = state.session(session_id)?;
        Ok(AnswerAck { index, remaining: s.session.answers.iter().filter(|a| a.is_none()).count() })
    }

    pub fn finalize(&self, session_id: &str) -> Result<SessionReport, ListenError> {
        let mut guard = self.inner.lock().unwrap();
        let (state, file) = &mut *guard;
        let s = state.session(session_id)?;
        if !s.session.counted_complete() {
            let open = s.session.trials.iter().zip(&s.session.answers).filter(|(t, a)| t.counted && a.is_none()).count();
            return Err(ListenError::Incomplete(format!("{open} counted trials are unanswered")));
        }
        if !s.finalized {
            Self::commit(state, file, LogEvent::Finalize { session_id: session_id.to_string(), at_ms: now_ms() })?;
        }
        state.session(session_id)?.report()
    }

    pub fn report(&self, session_id: &str) -> Result<SessionReport, ListenError> {
        let guard = self.inner.lock().unwrap();
        let s = guard.0.session(session_id)?;
        if !s.finalized {
            return Err(ListenError::NotFinalized);
        }
        s.report()
    }

    /// Ids of every known session, sorted.
    pub fn session_ids(&self) -> Vec<String> {
        let guard = self.inner.lock().unwrap();
        let mut ids: Vec<String> = guard.0.sessions.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Answer key of a session, for scripted tests and offline analysis.
    pub fn answer_key(&self, session_id: &str) -> Result<Vec<bool>, ListenError> {
        let guard = self.inner.lock().unwrap();
        Ok(guard.0.session(session_id)?.session.trials.iter().map(|t| t.trial.is_target).collect())
    }
}
