use std::path::Path;

use super::{AudioSegment, CorpusError, CORPUS_SAMPLE_RATE};

const PCM_SCALE: f32 = 32768.0;

fn classify(path: &Path, err: hound::Error) -> CorpusError {
    match err {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            CorpusError::MalformedHeader { path: path.to_path_buf(), reason: "truncated file".into() }
        }
        hound::Error::IoError(e) => CorpusError::Io(e),
        hound::Error::FormatError(reason) => {
            CorpusError::MalformedHeader { path: path.to_path_buf(), reason: reason.into() }
        }
        hound::Error::Unsupported => CorpusError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "non-PCM format tag".into(),
        },
        other => CorpusError::MalformedHeader { path: path.to_path_buf(), reason: other.to_string() },
    }
}

fn open_checked(path: &Path) -> Result<hound::WavReader<std::io::BufReader<std::fs::File>>, CorpusError> {
    let reader = hound::WavReader::open(path).map_err(|e| classify(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(CorpusError::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!("{:?} {}-bit (16-bit PCM required)", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.channels != 1 {
        return Err(CorpusError::UnsupportedChannels { path: path.to_path_buf(), channels: spec.channels });
    }
    if spec.sample_rate != CORPUS_SAMPLE_RATE {
        return Err(CorpusError::UnsupportedSampleRate { path: path.to_path_buf(), rate: spec.sample_rate });
    }
    Ok(reader)
}

/// Reads a 16 kHz, 16-bit, mono PCM WAV file. Samples are scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioSegment, CorpusError> {
    let mut reader = open_checked(path)?;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / PCM_SCALE))
        .collect::<Result<Vec<f32>, _>>()
        .map_err(|e| classify(path, e))?;
    if samples.is_empty() {
        return Err(CorpusError::EmptyAudio { path: path.to_path_buf() });
    }
    Ok(AudioSegment { samples, sample_rate: CORPUS_SAMPLE_RATE, source_precision: 16 })
}

/// Duration from the header alone, without decoding samples.
pub(super) fn header_duration(path: &Path) -> Result<f64, CorpusError> {
    let reader = open_checked(path)?;
    Ok(reader.duration() as f64 / CORPUS_SAMPLE_RATE as f64)
}

/// Quantizes to 16-bit PCM. Samples read by [`read_wav`] are written back
/// bit-exactly.
pub fn write_wav(path: &Path, seg: &AudioSegment) -> Result<(), CorpusError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: seg.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| classify(path, e))?;
    for &s in &seg.samples {
        let q = (s * PCM_SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
        writer.write_sample(q).map_err(|e| classify(path, e))?;
    }
    writer.finalize().map_err(|e| classify(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_raw(path: &Path, channels: u16, rate: u32, bits: u16, n: usize) {
        let spec = hound::WavSpec { channels, sample_rate: rate, bits_per_sample: bits, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for i in 0..n * channels as usize {
            match bits {
                8 => w.write_sample((i % 100) as i8).unwrap(),
                _ => w.write_sample((i % 1000) as i16).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn sample_count_matches_duration() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16_000, 16, 5760);
        let seg = read_wav(&p).unwrap();
        assert_eq!(seg.len(), 5760);
        assert!((seg.duration_s() - 0.36).abs() < 1e-12);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 44 + 5760 * 2);
    }

    #[test]
    fn silence_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_wav(&p, &AudioSegment::new(vec![0.0; 800], 16_000)).unwrap();
        let seg = read_wav(&p).unwrap();
        assert!(seg.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_each_unsupported_property_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("8bit.wav");
        write_raw(&p8, 1, 16_000, 8, 100);
        assert!(matches!(read_wav(&p8), Err(CorpusError::UnsupportedEncoding { .. })));
        let ps = dir.path().join("stereo.wav");
        write_raw(&ps, 2, 16_000, 16, 100);
        assert!(matches!(read_wav(&ps), Err(CorpusError::UnsupportedChannels { channels: 2, .. })));
        let pr = dir.path().join("8k.wav");
        write_raw(&pr, 1, 8_000, 16, 100);
        assert!(matches!(read_wav(&pr), Err(CorpusError::UnsupportedSampleRate { rate: 8000, .. })));
        let pm = dir.path().join("junk.wav");
        std::fs::write(&pm, b"not a riff file at all, definitely not").unwrap();
        assert!(matches!(read_wav(&pm), Err(CorpusError::MalformedHeader { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn pcm_payload_round_trips(pcm in proptest::collection::vec(any::<i16>(), 1..400)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.wav");
            let spec = hound::WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for &s in &pcm { w.write_sample(s).unwrap(); }
            w.finalize().unwrap();
            let original = std::fs::read(&p).unwrap();
            let seg = read_wav(&p).unwrap();
            let q = dir.path().join("rt2.wav");
            write_wav(&q, &seg).unwrap();
            prop_assert_eq!(original, std::fs::read(&q).unwrap());
        }
    }
}
