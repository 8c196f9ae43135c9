use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Trial, TrialList};
use crate::corpus::{CorpusManifest, EventType, UtteranceRecord};

fn sorted_event<'a>(manifest: &'a CorpusManifest, event: EventType) -> Vec<&'a UtteranceRecord> {
    let mut recs: Vec<&UtteranceRecord> = manifest.of_event(event).collect();
    recs.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    recs
}

/// Every unordered pair of utterances of one event, in lexicographic order.
pub fn gen_exhaustive_trials(manifest: &CorpusManifest, event: EventType) -> Result<TrialList, EvalError> {
    let recs = sorted_event(manifest, event);
    if recs.len() < 2 {
        return Err(EvalError::TooFewUtterances { event, got: recs.len() });
    }
    let n = recs.len();
    let mut trials = Vec::with_capacity(n * (n - 1) / 2);
    for (i, a) in recs.iter().enumerate() {
        for b in &recs[i + 1..] {
            trials.push(Trial { utt_a: a.utt_id.clone(), utt_b: b.utt_id.clone(), is_target: a.spk_id == b.spk_id });
        }
    }
    Ok(TrialList { event, trials })
}

/// Sorted utterance ids of one event, grouped by speaker.
fn by_speaker(manifest: &CorpusManifest, event: EventType) -> BTreeMap<&str, Vec<&str>> {
    let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in sorted_event(manifest, event) {
        map.entry(&r.spk_id).or_default().push(&r.utt_id);
    }
    map
}

/// `per_event` randomly sampled trials for each event; each is a target with
/// probability `p_target`. An utterance is never paired with itself and no
/// unordered pair repeats within an event.
pub fn gen_human_trials(
    manifest: &CorpusManifest,
    events: &[EventType],
    per_event: usize,
    p_target: f64,
    seed: u64,
) -> Result<Vec<TrialList>, EvalError> {
    if !(0.0..=1.0).contains(&p_target) {
        return Err(EvalError::BadProbability(p_target));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(events.len());
    for &event in events {
        let groups = by_speaker(manifest, event);
        let speakers: Vec<&str> = groups.keys().copied().collect();
        let multi: Vec<&str> = groups.iter().filter(|(_, u)| u.len() >= 2).map(|(s, _)| *s).collect();
        let mut seen = HashSet::new();
        let mut trials = Vec::with_capacity(per_event);
        while trials.len() < per_event {
            let target = rng.gen_bool(p_target);
            let mut found = None;
            for _ in 0..1000 {
                let (a, b) = if target {
                    let spk = multi.choose(&mut rng).ok_or_else(|| EvalError::InsufficientData {
                        event,
                        kind: "target",
                        reason: "no speaker has two utterances".into(),
                    })?;
                    let pick: Vec<&&str> = groups[spk].choose_multiple(&mut rng, 2).collect();
                    (*pick[0], *pick[1])
                } else {
                    if speakers.len() < 2 {
                        return Err(EvalError::InsufficientData {
                            event,
                            kind: "nontarget",
                            reason: "fewer than two speakers".into(),
                        });
                    }
                    let pick: Vec<&&str> = speakers.choose_multiple(&mut rng, 2).collect();
                    (*groups[*pick[0]].choose(&mut rng).unwrap(), *groups[*pick[1]].choose(&mut rng).unwrap())
                };
                let key = if a < b { (a, b) } else { (b, a) };
                if seen.insert(key) {
                    found = Some((a, b));
                    break;
                }
            }
            let (a, b) = found.ok_or_else(|| EvalError::InsufficientData {
                event,
                kind: if target { "target" } else { "nontarget" },
                reason: "ran out of distinct pairs".into(),
            })?;
            trials.push(Trial { utt_a: a.to_string(), utt_b: b.to_string(), is_target: target });
        }
        out.push(TrialList { event, trials });
    }
    Ok(out)
}

/// Normal-versus-disguised machine trials: every cross-style pair, a target
/// when both sides come from the same speaker. `utt_a` is always the normal
/// utterance.
pub fn gen_disguise_trials(manifest: &CorpusManifest) -> Result<TrialList, EvalError> {
    let normal = sorted_event(manifest, EventType::Normal);
    let disguised = sorted_event(manifest, EventType::Disguised);
    if normal.is_empty() || disguised.is_empty() {
        return Err(EvalError::InsufficientData {
            event: EventType::Disguised,
            kind: "cross-style",
            reason: format!("{} normal and {} disguised utterances", normal.len(), disguised.len()),
        });
    }
    let mut trials = Vec::with_capacity(normal.len() * disguised.len());
    for a in &normal {
        for b in &disguised {
            trials.push(Trial { utt_a: a.utt_id.clone(), utt_b: b.utt_id.clone(), is_target: a.spk_id == b.spk_id });
        }
    }
    if !trials.iter().any(|t| t.is_target) {
        return Err(EvalError::InsufficientData {
            event: EventType::Disguised,
            kind: "target",
            reason: "no speaker has both styles".into(),
        });
    }
    Ok(TrialList { event: EventType::Disguised, trials })
}
