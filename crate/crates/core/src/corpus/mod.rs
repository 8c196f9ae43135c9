//! Corpus I/O: 16 kHz mono WAV segments, line-oriented manifests, per-event
//! statistics and a deterministic synthetic corpus generator.

mod synth;
mod wav;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{synth_corpus, SynthSpec};
pub use wav::{read_wav, write_wav};

/// Sample rate of every corpus file.
pub const CORPUS_SAMPLE_RATE: u32 = 16_000;

/// Tolerance between a manifest's stored duration and the audio's real one.
const DURATION_TOLERANCE_S: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: malformed WAV header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: unsupported encoding: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: unsupported channel count {channels} (mono required)")]
    UnsupportedChannels { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported sample rate {rate} Hz (16000 required)")]
    UnsupportedSampleRate { path: PathBuf, rate: u32 },
    #[error("{path}: audio segment has no samples")]
    EmptyAudio { path: PathBuf },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: duplicate utterance id `{utt_id}`")]
    DuplicateUtterance { line: usize, utt_id: String },
    #[error("utterance `{utt_id}`: audio file {path} does not exist")]
    MissingAudio { utt_id: String, path: PathBuf },
    #[error("invalid synthesis spec: {0}")]
    InvalidSynthSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// PCM audio normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_precision: u16,
}

impl AudioSegment {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate, source_precision: 16 }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Vocal event category. The first six are trivial events, the last two are
/// the speaking styles of the disguise corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    Cough,
    Laugh,
    Hmm,
    Tsk,
    Ahem,
    Sniff,
    Normal,
    Disguised,
}

impl EventType {
    pub const ALL: [EventType; 8] = [
        EventType::Cough,
        EventType::Laugh,
        EventType::Hmm,
        EventType::Tsk,
        EventType::Ahem,
        EventType::Sniff,
        EventType::Normal,
        EventType::Disguised,
    ];

    pub const TRIVIAL: [EventType; 6] = [
        EventType::Cough,
        EventType::Laugh,
        EventType::Hmm,
        EventType::Tsk,
        EventType::Ahem,
        EventType::Sniff,
    ];

    pub fn is_trivial(self) -> bool {
        !matches!(self, EventType::Normal | EventType::Disguised)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Cough => "cough",
            EventType::Laugh => "laugh",
            EventType::Hmm => "hmm",
            EventType::Tsk => "tsk",
            EventType::Ahem => "ahem",
            EventType::Sniff => "sniff",
            EventType::Normal => "normal",
            EventType::Disguised => "disguised",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventType::ALL
            .iter()
            .copied()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown event type `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub spk_id: String,
    pub event: EventType,
    /// Audio path as written in the manifest, relative to the manifest root
    /// unless absolute.
    pub path: PathBuf,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub name: String,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn resolve(&self, record: &UtteranceRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    /// Records of one event, in manifest order.
    pub fn of_event(&self, event: EventType) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.event == event)
    }

    /// Events present, in canonical order.
    pub fn events(&self) -> Vec<EventType> {
        let set: BTreeSet<EventType> = self.records.iter().map(|r| r.event).collect();
        set.into_iter().collect()
    }

    /// Sorted distinct speaker ids.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.spk_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Manifest text in the on-disk format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("# utt_id\tspk_id\tevent\tpath\tduration_s\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.utt_id,
                r.spk_id,
                r.event,
                r.path.display(),
                r.duration_s
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, name: &str, root: &Path) -> Result<CorpusManifest, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 5 {
            return Err(CorpusError::Parse {
                line,
                reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
            let names = ["utt_id", "spk_id", "event", "path", "duration_s"];
            return Err(CorpusError::Parse { line, reason: format!("missing field `{}`", names[pos]) });
        }
        let event = fields[2].parse::<EventType>().map_err(|reason| CorpusError::Parse { line, reason })?;
        let duration_s: f64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| CorpusError::Parse { line, reason: format!("bad duration `{}`", fields[4]) })?;
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(CorpusError::Parse { line, reason: format!("duration must be positive, got {duration_s}") });
        }
        let utt_id = fields[0].to_owned();
        if !seen.insert(utt_id.clone()) {
            return Err(CorpusError::DuplicateUtterance { line, utt_id });
        }
        records.push(UtteranceRecord {
            utt_id,
            spk_id: fields[1].to_owned(),
            event,
            path: PathBuf::from(fields[3]),
            duration_s,
        });
    }
    Ok(CorpusManifest { name: name.to_owned(), root: root.to_path_buf(), records })
}

/// Loads a manifest and checks every referenced file. Stored durations are
/// compared against the WAV header; a mismatch above 1 ms is logged, not
/// rejected.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = parse_manifest(&text, &name, &root)?;
    for rec in &manifest.records {
        let audio = manifest.resolve(rec);
        if !audio.is_file() {
            return Err(CorpusError::MissingAudio { utt_id: rec.utt_id.clone(), path: audio });
        }
        let actual = wav::header_duration(&audio)?;
        if (actual - rec.duration_s).abs() > DURATION_TOLERANCE_S {
            log::warn!(
                "{}: manifest duration {:.4}s differs from audio duration {:.4}s",
                rec.utt_id,
                rec.duration_s,
                actual
            );
        }
    }
    Ok(manifest)
}

/// One row of the per-event profile table.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStats {
    pub event: EventType,
    pub speakers: usize,
    pub utterances: usize,
    pub utts_per_speaker: f64,
    pub avg_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub rows: Vec<EventStats>,
}

/// Per-event speaker count, utterance count, utterances per speaker and mean
/// duration. Values are exact; rounding happens only in `Display`.
pub fn corpus_stats(manifest: &CorpusManifest) -> CorpusStats {
    let mut per_event: BTreeMap<EventType, (BTreeSet<&str>, usize, f64)> = BTreeMap::new();
    for r in &manifest.records {
        let entry = per_event.entry(r.event).or_default();
        entry.0.insert(r.spk_id.as_str());
        entry.1 += 1;
        entry.2 += r.duration_s;
    }
    let rows = per_event
        .into_iter()
        .map(|(event, (spks, n, dur))| EventStats {
            event,
            speakers: spks.len(),
            utterances: n,
            utts_per_speaker: n as f64 / spks.len() as f64,
            avg_duration_s: dur / n as f64,
        })
        .collect();
    CorpusStats { rows }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>6} {:>11} {:>9} {:>18}", "Event", "Spks", "Total Utts", "Utts/Spk", "Avg. duration (s)")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<10} {:>6} {:>11} {:>9.2} {:>18.2}",
                row.event.as_str(),
                row.speakers,
                row.utterances,
                row.utts_per_speaker,
                row.avg_duration_s
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(utt: &str, spk: &str, event: EventType, dur: f64) -> UtteranceRecord {
        UtteranceRecord {
            utt_id: utt.into(),
            spk_id: spk.into(),
            event,
            path: PathBuf::from(format!("{utt}.wav")),
            duration_s: dur,
        }
    }

    /// Builds a manifest with `total` utterances spread over `speakers` and a
    /// mean duration of exactly `avg`.
    fn profile(event: EventType, speakers: usize, total: usize, avg: f64) -> Vec<UtteranceRecord> {
        (0..total)
            .map(|i| {
                // alternate +-0.05 around the mean; the odd leftover sits on it
                let offset = if total % 2 == 1 && i == total - 1 {
                    0.0
                } else if i % 2 == 0 {
                    0.05
                } else {
                    -0.05
                };
                record(&format!("{event}-{i:04}"), &format!("s{:02}", i % speakers), event, avg + offset)
            })
            .collect()
    }

    #[test]
    fn event_names_round_trip() {
        for e in EventType::ALL {
            assert_eq!(e.as_str().parse::<EventType>().unwrap(), e);
        }
        assert!("whistle".parse::<EventType>().is_err());
        assert_eq!(EventType::TRIVIAL.iter().filter(|e| e.is_trivial()).count(), 6);
    }

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let text = "# header\n\nu1\ts1\tcough\ta.wav\t0.36\nu2\ts2\tlaugh\tb.wav\t0.39\n";
        let m = parse_manifest(text, "m", Path::new("/data")).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[1].event, EventType::Laugh);
        assert_eq!(m.resolve(&m.records[0]), PathBuf::from("/data/a.wav"));
    }

    #[test]
    fn parse_empty_is_valid() {
        let m = parse_manifest("", "empty", Path::new(".")).unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn parse_rejects_duplicates() {
        let text = "u1\ts1\tcough\ta.wav\t0.3\nu1\ts2\tcough\tb.wav\t0.3\n";
        match parse_manifest(text, "m", Path::new(".")) {
            Err(CorpusError::DuplicateUtterance { line, utt_id }) => {
                assert_eq!(line, 2);
                assert_eq!(utt_id, "u1");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_missing_field() {
        let text = "u1\t\tcough\ta.wav\t0.3\n";
        assert!(matches!(parse_manifest(text, "m", Path::new(".")), Err(CorpusError::Parse { line: 1, .. })));
        let short = "u1\ts1\tcough\ta.wav\n";
        assert!(matches!(parse_manifest(short, "m", Path::new(".")), Err(CorpusError::Parse { .. })));
        let bad_dur = "u1\ts1\tcough\ta.wav\t-1\n";
        assert!(matches!(parse_manifest(bad_dur, "m", Path::new(".")), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn stats_single_record() {
        let m = CorpusManifest { records: vec![record("u", "s", EventType::Hmm, 1.0)], ..Default::default() };
        let stats = corpus_stats(&m);
        assert_eq!(stats.rows.len(), 1);
        let row = &stats.rows[0];
        assert_eq!((row.speakers, row.utterances), (1, 1));
        assert_eq!(row.utts_per_speaker, 1.0);
        assert_eq!(row.avg_duration_s, 1.0);
        assert!(stats.to_string().contains("1.00"));
    }

    #[test]
    fn stats_reproduce_trivial_profile_shape() {
        let mut records = profile(EventType::Cough, 75, 732, 0.36);
        records.extend(profile(EventType::Tsk, 75, 1039, 0.17));
        let m = CorpusManifest { records, ..Default::default() };
        let stats = corpus_stats(&m);
        let cough = &stats.rows[0];
        assert_eq!((cough.speakers, cough.utterances), (75, 732));
        assert_eq!(format!("{:.2}", cough.utts_per_speaker), "9.76");
        assert_eq!(format!("{:.2}", cough.avg_duration_s), "0.36");
        let tsk = &stats.rows[1];
        assert_eq!((tsk.speakers, tsk.utterances), (75, 1039));
        assert_eq!(format!("{:.2}", tsk.utts_per_speaker), "13.85");
        assert_eq!(format!("{:.2}", tsk.avg_duration_s), "0.17");
        // totals per event equal record counts exactly
        let total: usize = stats.rows.iter().map(|r| r.utterances).sum();
        assert_eq!(total, m.records.len());
    }

    #[test]
    fn manifest_text_round_trips() {
        let m = CorpusManifest {
            name: "x".into(),
            root: PathBuf::from("/r"),
            records: vec![record("a", "s1", EventType::Sniff, 0.37), record("b", "s2", EventType::Ahem, 0.45)],
        };
        let back = parse_manifest(&m.to_tsv(), "x", Path::new("/r")).unwrap();
        assert_eq!(back.records, m.records);
    }
}
