//! Corpus-level glue shared by the command-line driver and the end-to-end
//! tests: feature streams for both systems, per-utterance statistics, vector
//! extraction, and speaker labelling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{read_wav, AudioSegment, CorpusError, CorpusManifest};
use crate::dsp::{add_deltas, cmvn, splice, DspError, FeatureMatrix, Frontend, FrontendConfig};
use crate::embednet::{dvector, FrameNet, LabeledUtterance, NetError};
use crate::gmm::{accumulate_stats, BaumWelchStats, DiagGmm, GmmError};
use crate::tvspace::{extract_ivector, SpeakerVector, TotalVariabilityModel, TvError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("utterance `{utt_id}`: {source}")]
    Dsp { utt_id: String, source: DspError },
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Tv(#[from] TvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("utterance `{0}` is not in the manifest")]
    UnknownUtterance(String),
    #[error("statistics matrix for `{utt_id}` has {cols} columns, expected 1 + dim")]
    BadStats { utt_id: String, cols: usize },
}

/// Which frontend stream to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// 19 MFCCs + log energy, Δ and ΔΔ, per-utterance CMVN: 60 dims.
    Mfcc,
    /// 40 log mel bins, per-utterance CMVN, ±context splice: 360 dims.
    Fbank,
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mfcc" => Ok(Self::Mfcc),
            "fbank" => Ok(Self::Fbank),
            _ => Err(format!("unknown feature kind `{s}` (expected mfcc or fbank)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub mfcc: FrontendConfig,
    pub fbank: FrontendConfig,
    pub delta_order: usize,
    pub delta_window: usize,
    /// Frames of context on each side of the spliced Fbank stream.
    pub splice_context: usize,
    /// Per-utterance variance normalization on top of mean removal.
    pub cmvn_variance: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            mfcc: FrontendConfig::mfcc(),
            fbank: FrontendConfig::fbank(),
            delta_order: 2,
            delta_window: 2,
            splice_context: 4,
            cmvn_variance: true,
        }
    }
}

/// Frontends built once and reused for every utterance.
pub struct FeaturePipeline {
    cfg: FeatureConfig,
    mfcc: Frontend,
    fbank: Frontend,
}

impl FeaturePipeline {
    pub fn new(cfg: FeatureConfig) -> Result<Self, DspError> {
        Ok(Self { mfcc: Frontend::new(cfg.mfcc.clone())?, fbank: Frontend::new(cfg.fbank.clone())?, cfg })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn compute(&self, seg: &AudioSegment, kind: FeatureKind) -> Result<FeatureMatrix, DspError> {
        match kind {
            FeatureKind::Mfcc => {
                let base = self.mfcc.mfcc(seg)?;
                let full = add_deltas(&base, self.cfg.delta_order, self.cfg.delta_window)?;
                Ok(relabel(cmvn(&full, self.cfg.cmvn_variance), format!("mfcc+e+deltas:{}", full.cols())))
            }
            FeatureKind::Fbank => {
                let base = cmvn(&self.fbank.fbank(seg)?, self.cfg.cmvn_variance);
                let c = self.cfg.splice_context;
                let out = splice(&base, c, c);
                let label = format!("fbank{}x{}:{}", base.cols(), 2 * c + 1, out.cols());
                Ok(relabel(out, label))
            }
        }
    }

    /// Features of every manifest record, in manifest order. Utterances are
    /// processed in parallel; the result does not depend on thread count.
    pub fn extract_manifest(
        &self,
        manifest: &CorpusManifest,
        kind: FeatureKind,
    ) -> Result<Vec<(String, FeatureMatrix)>, PipelineError> {
        manifest
            .records
            .par_iter()
            .map(|r| {
                let seg = read_wav(&manifest.resolve(r))?;
                let f = self
                    .compute(&seg, kind)
                    .map_err(|source| PipelineError::Dsp { utt_id: r.utt_id.clone(), source })?;
                Ok((r.utt_id.clone(), f))
            })
            .collect()
    }
}

fn relabel(f: FeatureMatrix, label: String) -> FeatureMatrix {
    let (rows, cols) = (f.rows(), f.cols());
    FeatureMatrix::new(rows, cols, f.as_slice().to_vec(), label)
}

/// Baum-Welch statistics per utterance, order-aligned with the input.
pub fn accumulate_all(
    gmm: &DiagGmm,
    feats: &[(String, FeatureMatrix)],
) -> Result<Vec<(String, BaumWelchStats)>, PipelineError> {
    feats
        .par_iter()
        .map(|(id, f)| Ok((id.clone(), accumulate_stats(gmm, f)?)))
        .collect()
}

/// Packs statistics as a C x (1 + D) matrix: occupancy, then centered first
/// order sums.
pub fn stats_to_matrix(stats: &BaumWelchStats) -> FeatureMatrix {
    let (c, d) = (stats.n_components(), stats.dim);
    let mut data = Vec::with_capacity(c * (d + 1));
    for k in 0..c {
        data.push(stats.zeroth[k]);
        data.extend_from_slice(stats.first_of(k));
    }
    FeatureMatrix::new(c, d + 1, data, "bw-stats")
}

pub fn stats_from_matrix(utt_id: &str, m: &FeatureMatrix) -> Result<BaumWelchStats, PipelineError> {
    if m.cols() < 2 {
        return Err(PipelineError::BadStats { utt_id: utt_id.to_string(), cols: m.cols() });
    }
    let d = m.cols() - 1;
    let mut stats = BaumWelchStats::zeros(m.rows(), d);
    for (k, row) in m.iter_rows().enumerate() {
        stats.zeroth[k] = row[0];
        stats.first[k * d..(k + 1) * d].copy_from_slice(&row[1..]);
    }
    stats.n_frames = stats.zeroth.iter().sum::<f64>().round() as usize;
    Ok(stats)
}

pub fn extract_ivectors(
    model: &TotalVariabilityModel,
    stats: &[(String, BaumWelchStats)],
) -> Result<Vec<SpeakerVector>, PipelineError> {
    stats
        .par_iter()
        .map(|(id, s)| Ok(extract_ivector(model, s, id)?))
        .collect()
}

pub fn extract_dvectors(
    net: &FrameNet,
    feats: &[(String, FeatureMatrix)],
) -> Result<Vec<SpeakerVector>, PipelineError> {
    feats
        .par_iter()
        .map(|(id, f)| Ok(dvector(net, f, id)?))
        .collect()
}

/// Sorted speaker ids and their softmax indices.
pub fn speaker_index(manifest: &CorpusManifest) -> BTreeMap<String, usize> {
    manifest.speakers().into_iter().enumerate().map(|(i, s)| (s, i)).collect()
}

/// Pairs each feature matrix with its speaker index.
pub fn labeled_utterances(
    manifest: &CorpusManifest,
    feats: &[(String, FeatureMatrix)],
) -> Result<(Vec<LabeledUtterance>, BTreeMap<String, usize>), PipelineError> {
    let index = speaker_index(manifest);
    let spk_of: BTreeMap<&str, &str> =
        manifest.records.iter().map(|r| (r.utt_id.as_str(), r.spk_id.as_str())).collect();
    let data = feats
        .iter()
        .map(|(id, f)| {
            let spk = spk_of.get(id.as_str()).ok_or_else(|| PipelineError::UnknownUtterance(id.clone()))?;
            Ok(LabeledUtterance { features: f.clone(), label: index[*spk] })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((data, index))
}

/// Speaker id of every vector, looked up by utterance id.
pub fn vector_speakers(manifest: &CorpusManifest, vectors: &[SpeakerVector]) -> Result<Vec<String>, PipelineError> {
    let spk_of: BTreeMap<&str, &str> =
        manifest.records.iter().map(|r| (r.utt_id.as_str(), r.spk_id.as_str())).collect();
    vectors
        .iter()
        .map(|v| {
            spk_of
                .get(v.utt_id.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| PipelineError::UnknownUtterance(v.utt_id.clone()))
        })
        .collect()
}
