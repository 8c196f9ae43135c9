use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tev_core::corpus::{CorpusManifest, EventType};
use tev_core::eval::{gen_human_trials, HumanTrial, Trial};

use crate::ListenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Same/different on pairs of one trivial event, every trivial event.
    Trivial,
    /// Normal versus disguised recordings of one speaker, with uncounted
    /// cross-speaker pairs mixed in as noise.
    Disguise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub protocol: Protocol,
    /// Trials per event (trivial) or counted trials (disguise).
    pub per_event: usize,
    pub p_target: f64,
    /// Uncounted cross-speaker trials added to a disguise session.
    pub imposter_noise: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { protocol: Protocol::Trivial, per_event: 6, p_target: 0.5, imposter_noise: 2, seed: 0 }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ListenError> {
        if self.per_event == 0 {
            return Err(ListenError::InvalidConfig("per_event must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p_target) {
            return Err(ListenError::InvalidConfig(format!("p_target {} is not a probability", self.p_target)));
        }
        Ok(())
    }
}

/// The trial list of a new session; deterministic in the config.
pub fn build_trials(cfg: &SessionConfig, manifest: &CorpusManifest) -> Result<Vec<HumanTrial>, ListenError> {
    cfg.validate()?;
    match cfg.protocol {
        Protocol::Trivial => {
            let lists = gen_human_trials(manifest, &EventType::TRIVIAL, cfg.per_event, cfg.p_target, cfg.seed)
                .map_err(|e| ListenError::InsufficientCorpus(e.to_string()))?;
            Ok(lists
                .into_iter()
                .flat_map(|l| {
                    let event = l.event;
                    l.trials.into_iter().map(move |trial| HumanTrial { event, trial, counted: true })
                })
                .collect())
        }
        Protocol::Disguise => disguise_trials(cfg, manifest),
    }
}

fn disguise_trials(cfg: &SessionConfig, manifest: &CorpusManifest) -> Result<Vec<HumanTrial>, ListenError> {
    let mut styles: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for r in &manifest.records {
        let entry = styles.entry(r.spk_id.as_str()).or_default();
        match r.event {
            EventType::Normal => entry.0.push(&r.utt_id),
            EventType::Disguised => entry.1.push(&r.utt_id),
            _ => {}
        }
    }
    for (n, d) in styles.values_mut() {
        n.sort_unstable();
        d.sort_unstable();
    }
    let both: Vec<&str> = styles.iter().filter(|(_, (n, d))| !n.is_empty() && !d.is_empty()).map(|(s, _)| *s).collect();
    if both.is_empty() {
        return Err(ListenError::InsufficientCorpus("no speaker has both normal and disguised speech".into()));
    }
    if cfg.imposter_noise > 0 && both.len() < 2 {
        return Err(ListenError::InsufficientCorpus("imposter trials need two speakers with both styles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trials = Vec::with_capacity(cfg.per_event + cfg.imposter_noise);
    // cycle through a shuffled speaker order so speakers repeat only when needed
    let mut order = both.clone();
    for k in 0..cfg.per_event {
        if k % order.len() == 0 {
            order.shuffle(&mut rng);
        }
        let spk = order[k % order.len()];
        let (n, d) = &styles[spk];
        let trial = Trial {
            utt_a: n.choose(&mut rng).unwrap().to_string(),
            utt_b: d.choose(&mut rng).unwrap().to_string(),
            is_target: true,
        };
        trials.push(HumanTrial { event: EventType::Disguised, trial, counted: true });
    }
    for _ in 0..cfg.imposter_noise {
        let pair: Vec<&&str> = both.choose_multiple(&mut rng, 2).collect();
        let trial = Trial {
            utt_a: styles[*pair[0]].0.choose(&mut rng).unwrap().to_string(),
            utt_b: styles[*pair[1]].1.choose(&mut rng).unwrap().to_string(),
            is_target: false,
        };
        trials.push(HumanTrial { event: EventType::Disguised, trial, counted: false });
    }
    trials.shuffle(&mut rng);
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;
    use tev_core::corpus::UtteranceRecord;

    pub(crate) fn manifest(events: &[EventType], speakers: usize, per: usize) -> CorpusManifest {
        let mut m = CorpusManifest::default();
        for &e in events {
            for s in 0..speakers {
                for k in 0..per {
                    m.records.push(UtteranceRecord {
                        utt_id: format!("spk{s:02}-{e}-{k}"),
                        spk_id: format!("spk{s:02}"),
                        event: e,
                        path: PathBuf::from(format!("{s}-{e}-{k}.wav")),
                        duration_s: 0.3,
                    });
                }
            }
        }
        m
    }

    #[test]
    fn trivial_protocol_has_thirty_six_counted_trials() {
        let m = manifest(&EventType::TRIVIAL, 4, 3);
        let t = build_trials(&SessionConfig::default(), &m).unwrap();
        assert_eq!(t.len(), 36);
        assert!(t.iter().all(|x| x.counted));
        for e in EventType::TRIVIAL {
            assert_eq!(t.iter().filter(|x| x.event == e).count(), 6);
        }
        assert_eq!(t, build_trials(&SessionConfig::default(), &m).unwrap());
    }

    #[test]
    fn disguise_protocol_mixes_in_uncounted_noise() {
        let m = manifest(&[EventType::Normal, EventType::Disguised], 5, 2);
        let cfg = SessionConfig { protocol: Protocol::Disguise, imposter_noise: 2, seed: 9, ..Default::default() };
        let t = build_trials(&cfg, &m).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t.iter().filter(|x| x.counted).count(), 6);
        let spk = |u: &str| m.get(u).unwrap().spk_id.clone();
        for x in &t {
            assert_eq!(m.get(&x.trial.utt_a).unwrap().event, EventType::Normal);
            assert_eq!(m.get(&x.trial.utt_b).unwrap().event, EventType::Disguised);
            assert_eq!(x.counted, spk(&x.trial.utt_a) == spk(&x.trial.utt_b));
            assert_eq!(x.trial.is_target, x.counted);
        }
        assert_eq!(t, build_trials(&cfg, &m).unwrap());
    }

    #[test]
    fn insufficient_corpora_are_rejected() {
        let m = manifest(&[EventType::Normal], 3, 2);
        let cfg = SessionConfig { protocol: Protocol::Disguise, ..Default::default() };
        assert!(matches!(build_trials(&cfg, &m), Err(ListenError::InsufficientCorpus(_))));
        let m = manifest(&[EventType::Cough], 3, 2);
        assert!(matches!(build_trials(&SessionConfig::default(), &m), Err(ListenError::InsufficientCorpus(_))));
        let bad = SessionConfig { per_event: 0, ..Default::default() };
        assert!(matches!(build_trials(&bad, &m), Err(ListenError::InvalidConfig(_))));
    }
}
