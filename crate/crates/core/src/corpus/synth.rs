//! Source-filter synthetic corpus.
//!
//! Each synthetic speaker owns three resonance frequencies and a pulse rate.
//! An utterance is an excitation (pulse train mixed with noise, in an
//! event-specific proportion) passed through the speaker's resonator cascade
//! and shaped by an event-specific amplitude envelope.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{write_wav, AudioSegment, CorpusError, CorpusManifest, EventType, UtteranceRecord, CORPUS_SAMPLE_RATE};

const MIN_RESONANCE_HZ: f64 = 300.0;
const MAX_RESONANCE_HZ: f64 = 3500.0;
/// Two speakers must differ by at least this much in one resonance.
const MIN_SPEAKER_SEPARATION_HZ: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utts_per_speaker_per_event: usize,
    pub events: Vec<EventType>,
    pub duration_range_s: (f64, f64),
    pub seed: u64,
    /// Prefix of generated speaker ids, so corpora drawn with different seeds
    /// can be mixed without id clashes.
    pub speaker_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            utts_per_speaker_per_event: 10,
            events: EventType::TRIVIAL.to_vec(),
            duration_range_s: (0.3, 0.5),
            seed: 7,
            speaker_prefix: "spk".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSynthSpec(m));
        if self.n_speakers < 2 {
            return bad(format!("verification needs at least 2 speakers, got {}", self.n_speakers));
        }
        if self.utts_per_speaker_per_event == 0 {
            return bad("utts_per_speaker_per_event must be at least 1".into());
        }
        if self.events.is_empty() {
            return bad("no events requested".into());
        }
        let (lo, hi) = self.duration_range_s;
        if !(lo > 0.1 && hi < 3.0 && lo <= hi) {
            return bad(format!("duration range ({lo}, {hi}) must lie within (0.1, 3.0) s"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SpeakerProfile {
    id: String,
    resonances: [f64; 3],
    pulse_rate: f64,
    disguise_rate_factor: f64,
    disguise_resonance_factor: f64,
}

fn draw_speakers(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<SpeakerProfile> {
    let mut speakers: Vec<SpeakerProfile> = Vec::with_capacity(spec.n_speakers);
    while speakers.len() < spec.n_speakers {
        let mut res = [0.0; 3];
        for r in &mut res {
            *r = rng.gen_range(MIN_RESONANCE_HZ..MAX_RESONANCE_HZ);
        }
        res.sort_by(f64::total_cmp);
        let distinct = speakers.iter().all(|other| {
            other.resonances.iter().zip(&res).any(|(a, b)| (a - b).abs() >= MIN_SPEAKER_SEPARATION_HZ)
        });
        if !distinct {
            continue;
        }
        let pulse_rate = rng.gen_range(90.0..250.0);
        // disguise pushes pitch clearly up or down and warps the vocal tract a little
        let up: bool = rng.gen();
        let disguise_rate_factor = if up { rng.gen_range(1.3..1.7) } else { rng.gen_range(0.6..0.8) };
        let disguise_resonance_factor = rng.gen_range(0.88..1.12);
        speakers.push(SpeakerProfile {
            id: format!("{}{:03}", spec.speaker_prefix, speakers.len() + 1),
            resonances: res,
            pulse_rate,
            disguise_rate_factor,
            disguise_resonance_factor,
        });
    }
    speakers
}

/// Event-specific excitation mix and amplitude envelope.
struct EventShape {
    voicing: f64,
    envelope: fn(f64) -> f64,
}

fn bump(u: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((u - center) / width).powi(2)).exp()
}

fn event_shape(event: EventType) -> EventShape {
    match event {
        EventType::Cough => EventShape { voicing: 0.3, envelope: |u| (u / 0.05).min(1.0) * (-4.0 * u).exp() },
        EventType::Laugh => EventShape {
            voicing: 0.8,
            envelope: |u| (PI * 3.0 * u).sin().powi(2) * (1.0 - 0.5 * u),
        },
        EventType::Hmm => EventShape { voicing: 0.95, envelope: |u| (PI * u).sin().sqrt() },
        EventType::Tsk => EventShape { voicing: 0.0, envelope: |u| bump(u, 0.25, 0.05) + bump(u, 0.65, 0.05) },
        EventType::Ahem => EventShape { voicing: 0.6, envelope: |u| bump(u, 0.25, 0.1) + 0.8 * bump(u, 0.65, 0.15) },
        EventType::Sniff => EventShape { voicing: 0.0, envelope: |u| (PI * u).sin() * (0.3 + 0.7 * u) },
        EventType::Normal | EventType::Disguised => EventShape {
            voicing: 0.85,
            envelope: |u| (PI * u).sin().powf(0.3) * (0.55 + 0.45 * (PI * 4.0 * u).sin().abs()),
        },
    }
}

/// Two-pole resonator cascade applied in place.
fn resonate(signal: &mut [f64], resonances: &[f64], sample_rate: f64) {
    for &freq in resonances {
        let bandwidth = 50.0 + 0.06 * freq;
        let r = (-PI * bandwidth / sample_rate).exp();
        let a1 = 2.0 * r * (2.0 * PI * freq / sample_rate).cos();
        let a2 = -r * r;
        let (mut y1, mut y2) = (0.0, 0.0);
        for s in signal.iter_mut() {
            let y = (1.0 - r) * *s + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            *s = y;
        }
    }
}

fn synth_utterance(spk: &SpeakerProfile, event: EventType, n_samples: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let fs = CORPUS_SAMPLE_RATE as f64;
    let shape = event_shape(event);
    let (mut rate, mut res_scale) = (spk.pulse_rate, 1.0);
    let mut voicing = shape.voicing;
    if event == EventType::Disguised {
        rate *= spk.disguise_rate_factor;
        res_scale = spk.disguise_resonance_factor;
        voicing *= 0.8;
    }
    rate *= 1.0 + rng.gen_range(-0.04..0.04);
    let resonances: Vec<f64> = spk
        .resonances
        .iter()
        .map(|f| (f * res_scale * (1.0 + rng.gen_range(-0.02..0.02))).min(fs / 2.0 - 200.0))
        .collect();

    let mut excitation = vec![0.0f64; n_samples];
    let mut phase: f64 = rng.gen_range(0.0..1.0);
    let mut tilt = 0.0;
    for x in excitation.iter_mut() {
        phase += rate / fs;
        let mut pulse = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            // per-period jitter
            phase += rng.gen_range(-0.01..0.01);
            pulse = 1.0;
        }
        tilt = pulse + 0.9 * tilt;
        let noise: f64 = rng.sample(StandardNormal);
        *x = voicing * tilt + (1.0 - voicing) * 0.3 * noise;
    }
    resonate(&mut excitation, &resonances, fs);

    let denom = (n_samples.max(2) - 1) as f64;
    for (i, x) in excitation.iter_mut().enumerate() {
        *x *= (shape.envelope)(i as f64 / denom);
    }
    let peak = excitation.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let gain = rng.gen_range(0.3..0.6) / peak;
    excitation
        .iter()
        .map(|&x| {
            let floor: f64 = rng.sample::<f64, _>(StandardNormal) * 1e-3;
            (x * gain + floor).clamp(-1.0, 32767.0 / 32768.0) as f32
        })
        .collect()
}

/// Writes a deterministic synthetic corpus under `out_dir` (WAV files under
/// `wav/<speaker>/` and `manifest.tsv`) and returns its manifest.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<CorpusManifest, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speakers = draw_speakers(spec, &mut rng);
    let (lo, hi) = spec.duration_range_s;
    let mut records = Vec::new();
    for spk in &speakers {
        let spk_dir = out_dir.join("wav").join(&spk.id);
        fs::create_dir_all(&spk_dir)?;
        for &event in &spec.events {
            for k in 0..spec.utts_per_speaker_per_event {
                let u: f64 = rng.gen();
                let duration = lo + u * (hi - lo);
                let n_samples = (duration * CORPUS_SAMPLE_RATE as f64).round() as usize;
                let samples = synth_utterance(spk, event, n_samples, &mut rng);
                let utt_id = format!("{}-{}-{:02}", spk.id, event, k + 1);
                let rel = PathBuf::from("wav").join(&spk.id).join(format!("{utt_id}.wav"));
                write_wav(&out_dir.join(&rel), &AudioSegment::new(samples, CORPUS_SAMPLE_RATE))?;
                records.push(UtteranceRecord {
                    utt_id,
                    spk_id: spk.id.clone(),
                    event,
                    path: rel,
                    duration_s: n_samples as f64 / CORPUS_SAMPLE_RATE as f64,
                });
            }
        }
    }
    let manifest = CorpusManifest { name: "manifest".into(), root: out_dir.to_path_buf(), records };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_manifest, read_wav};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_speakers: 3,
            utts_per_speaker_per_event: 2,
            events: vec![EventType::Cough, EventType::Hmm],
            duration_range_s: (0.3, 0.5),
            seed,
            speaker_prefix: "spk".into(),
        }
    }

    fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn fixed_seed_gives_byte_identical_corpora() {
        let spec = SynthSpec {
            n_speakers: 20,
            utts_per_speaker_per_event: 10,
            events: vec![EventType::Cough],
            duration_range_s: (0.3, 0.5),
            seed: 7,
            speaker_prefix: "spk".into(),
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&spec, a.path()).unwrap();
        synth_corpus(&spec, b.path()).unwrap();
        assert_eq!(ma.records.len(), 200);
        assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    }

    #[test]
    fn distinct_seeds_give_distinct_audio() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synth_corpus(&small(1), a.path()).unwrap();
        let mb = synth_corpus(&small(2), b.path()).unwrap();
        let sa = read_wav(&ma.resolve(&ma.records[0])).unwrap();
        let sb = read_wav(&mb.resolve(&mb.records[0])).unwrap();
        assert_ne!(sa.samples, sb.samples);
    }

    #[test]
    fn rejects_single_speaker() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_speakers: 1, ..small(1) };
        assert!(matches!(synth_corpus(&spec, dir.path()), Err(CorpusError::InvalidSynthSpec(_))));
        let spec = SynthSpec { duration_range_s: (0.05, 0.5), ..small(1) };
        assert!(matches!(synth_corpus(&spec, dir.path()), Err(CorpusError::InvalidSynthSpec(_))));
    }

    #[test]
    fn fixed_duration_gives_exact_sample_count() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_speakers: 2,
            utts_per_speaker_per_event: 1,
            events: vec![EventType::Hmm],
            duration_range_s: (0.49, 0.49),
            seed: 1,
            speaker_prefix: "spk".into(),
        };
        let m = synth_corpus(&spec, dir.path()).unwrap();
        assert_eq!(m.records.len(), 2);
        for r in &m.records {
            assert_eq!(read_wav(&m.resolve(r)).unwrap().len(), 7840);
        }
        // the written manifest loads back with the same records
        let loaded = load_manifest(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded.records, m.records);
    }

    #[test]
    fn speaker_resonances_are_separated() {
        let spec = SynthSpec { n_speakers: 200, ..small(3) };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let spk = draw_speakers(&spec, &mut rng);
        for (i, a) in spk.iter().enumerate() {
            assert!(a.resonances.iter().all(|f| (MIN_RESONANCE_HZ..MAX_RESONANCE_HZ).contains(f)));
            for b in &spk[i + 1..] {
                let max_gap = a.resonances.iter().zip(&b.resonances).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(max_gap >= MIN_SPEAKER_SEPARATION_HZ);
            }
        }
    }

    #[test]
    fn every_event_renders_finite_bounded_audio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = small(5);
        let spk = draw_speakers(&spec, &mut rng);
        for event in EventType::ALL {
            let s = synth_utterance(&spk[0], event, 4000, &mut rng);
            assert!(s.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
            assert!(s.iter().any(|v| v.abs() > 0.1), "{event} too quiet");
        }
    }
}
