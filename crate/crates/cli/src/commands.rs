use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Subcommand, ValueEnum};

use tev_core::backend::{length_normalize, lda_dim, train_lda, train_plda, Scorer, ScoringMethod};
use tev_core::corpus::{corpus_stats, load_manifest, synth_corpus, CorpusManifest, EventType, SynthSpec};
use tev_core::dsp::{read_archive, write_archive, FeatureMatrix};
use tev_core::embednet::{train, FrameNet};
use tev_core::eval::{
    compute_eer, gen_disguise_trials, gen_exhaustive_trials, gen_human_trials, read_scores, read_trials,
    score_trials, write_scores, Trial, TrialList,
};
use tev_core::gmm::{train_ubm, GmmInit};
use tev_core::model::ModelFile;
use tev_core::pipeline::{
    accumulate_all, extract_dvectors, extract_ivectors, labeled_utterances, stats_from_matrix, stats_to_matrix,
    vector_speakers, FeatureKind, FeaturePipeline,
};
use tev_core::tvspace::{init_tmatrix, read_vectors, train_tmatrix, write_vectors, SpeakerVector};
use tev_core::viz::{export_plot_data, subsample_rows, tsne, Style, TsneConfig};
use tev_listen::ListenService;

use crate::config::{parent_dir, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrialProtocol {
    /// Every same-event utterance pair.
    Exhaustive,
    /// Sampled pairs per event, as administered to listeners.
    Human,
    /// Every normal x disguised pair.
    Disguise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    BinarySplit,
    Kmeans,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus: wav/ plus manifest.tsv.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        speakers: usize,
        /// Utterances per speaker per event.
        #[arg(long, default_value_t = 10)]
        utts: usize,
        /// `trivial`, `disguise`, `all`, or a comma list of event names.
        #[arg(long, default_value = "trivial")]
        events: String,
        #[arg(long, default_value_t = 0.3)]
        min_dur: f64,
        #[arg(long, default_value_t = 0.5)]
        max_dur: f64,
        #[arg(long, default_value = "spk")]
        prefix: String,
    },
    /// Per-event speaker, utterance and duration profile of a corpus.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frontend features of every utterance into one archive.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        /// `mfcc` (i-vector stream) or `fbank` (network stream).
        #[arg(long)]
        kind: FeatureKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the diagonal GMM-UBM; starts a new model file.
    TrainUbm {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        components: Option<usize>,
        /// EM iterations per split level.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum)]
        init: Option<InitArg>,
    },
    /// Baum-Welch statistics of every utterance into an archive.
    AccumulateStats {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the total-variability matrix; adds it to the model file.
    TrainTmatrix {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    ExtractIvectors {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the frame-level speaker network; starts a new model file.
    TrainDnn {
        /// Fbank archive of the training utterances.
        #[arg(long)]
        features: PathBuf,
        /// Manifest giving the speaker of each training utterance.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
    },
    ExtractDvectors {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train LDA on length-normalized vectors; adds it to the model file.
    TrainLda {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train two-covariance PLDA (after LDA when present); adds it to the model file.
    TrainPlda {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
    },
    GenTrials {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "exhaustive")]
        protocol: TrialProtocol,
        /// Comma list of events; default every trivial event in the manifest.
        #[arg(long)]
        events: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    Score {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        /// `cosine`, `lda-cosine` or `plda`.
        #[arg(long, default_value = "cosine")]
        method: ScoringMethod,
        /// Model file holding the LDA/PLDA sections.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equal error rate of a score file against its trial labels.
    EvalEer {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// t-SNE of frame-level deep features, one plot file per speaker.
    TsneExport {
        /// Fbank archive covering normal and disguised utterances.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_per_group: Option<usize>,
        /// Only the first N speakers (sorted).
        #[arg(long)]
        speakers: Option<usize>,
    },
    /// Serve the listening-test HTTP API.
    ServeListen {
        #[arg(long)]
        manifest: PathBuf,
        /// Append-only session log.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

pub fn run(cmd: Command, mut cfg: PipelineConfig) -> Result<()> {
    match cmd {
        Command::SynthCorpus { out, speakers, utts, events, min_dur, max_dur, prefix } => {
            let spec = SynthSpec {
                n_speakers: speakers,
                utts_per_speaker_per_event: utts,
                events: parse_event_set(&events)?,
                duration_range_s: (min_dur, max_dur),
                seed: cfg.seed(),
                speaker_prefix: prefix,
            };
            let m = synth_corpus(&spec, &out)?;
            cfg.echo(&out)?;
            println!("wrote {} utterances to {}", m.records.len(), out.display());
        }
        Command::Stats { manifest, out } => {
            let table = corpus_stats(&load_manifest(&manifest)?).to_string();
            print!("{table}");
            if let Some(out) = out {
                write_file(&out, table.as_bytes())?;
                cfg.echo_beside(&out)?;
            }
        }
        Command::ExtractFeatures { manifest, kind, out } => {
            let m = load_manifest(&manifest)?;
            let pipe = FeaturePipeline::new(cfg.features.clone())?;
            let feats = pipe.extract_manifest(&m, kind)?;
            save_archive(&out, &feats)?;
            cfg.echo_beside(&out)?;
            let frames: usize = feats.iter().map(|(_, f)| f.rows()).sum();
            println!("{} utterances, {frames} frames", feats.len());
        }
        Command::TrainUbm { features, model, components, iters, init } => {
            if let Some(c) = components {
                cfg.gmm.n_components = c;
            }
            if let Some(n) = iters {
                cfg.gmm.n_iters = n;
            }
            if let Some(i) = init {
                cfg.gmm.init = match i {
                    InitArg::BinarySplit => GmmInit::BinarySplit,
                    InitArg::Kmeans => GmmInit::Kmeans,
                };
            }
            let feats: Vec<FeatureMatrix> = load_archive(&features)?.into_iter().map(|(_, f)| f).collect();
            let (gmm, trace) = train_ubm(&feats, &cfg.gmm)?;
            for level in &trace.levels {
                let last = level.log_likelihood.last().copied().unwrap_or(f64::NAN);
                println!("components {:>4} log-likelihood {last:.6}", level.components);
            }
            let file = ModelFile { gmm: Some(gmm), ..Default::default() };
            save_model(&model, &file)?;
            cfg.echo_beside(&model)?;
        }
        Command::AccumulateStats { features, model, out } => {
            let file = load_model(&model)?;
            let feats = load_archive(&features)?;
            let stats = accumulate_all(file.require_gmm()?, &feats)?;
            let packed: Vec<(String, FeatureMatrix)> =
                stats.iter().map(|(id, s)| (id.clone(), stats_to_matrix(s))).collect();
            save_archive(&out, &packed)?;
            cfg.echo_beside(&out)?;
        }
        Command::TrainTmatrix { stats, model, rank, iters } => {
            if let Some(r) = rank {
                cfg.tvspace.rank = r;
            }
            if let Some(n) = iters {
                cfg.tvspace.iters = n;
            }
            let mut file = load_model(&model)?;
            let stats: Vec<_> =
                load_stats(&stats)?.into_iter().map(|(_, s)| s).collect();
            let init = init_tmatrix(file.require_gmm()?, cfg.tvspace.rank, cfg.seed())?;
            let (tv, objectives) = train_tmatrix(&init, &stats, cfg.tvspace.iters)?;
            for (k, o) in objectives.iter().enumerate() {
                println!("iteration {k} objective {o:.6}");
            }
            file.tmatrix = Some(tv.t().clone());
            save_model(&model, &file)?;
            cfg.echo_beside(&model)?;
        }
        Command::ExtractIvectors { stats, model, out } => {
            let tv = load_model(&model)?.tv_model()?;
            let vectors = extract_ivectors(&tv, &load_stats(&stats)?)?;
            save_vectors(&out, &vectors)?;
            cfg.echo_beside(&out)?;
        }
        Command::TrainDnn { features, manifest, model, epochs, lr, feature_dim } => {
            if let Some(e) = epochs {
                cfg.embednet.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.embednet.lr = lr;
            }
            if let Some(d) = feature_dim {
                cfg.embednet.feature_dim = d;
            }
            let m = load_manifest(&manifest)?;
            let (data, index) = labeled_utterances(&m, &load_archive(&features)?)?;
            cfg.embednet.n_speakers = index.len();
            let (net, log) = train(FrameNet::new(cfg.embednet.clone())?, &data)?;
            for (k, ((loss, acc), lr)) in
                log.epoch_loss.iter().zip(&log.epoch_accuracy).zip(&log.learning_rates).enumerate()
            {
                println!("epoch {:>3} loss {loss:.6} accuracy {acc:.4} lr {lr}", k + 1);
            }
            save_model(&model, &ModelFile { dnn: Some(net), ..Default::default() })?;
            cfg.echo_beside(&model)?;
        }
        Command::ExtractDvectors { features, model, out } => {
            let file = load_model(&model)?;
            let vectors = extract_dvectors(file.require_dnn()?, &load_archive(&features)?)?;
            save_vectors(&out, &vectors)?;
            cfg.echo_beside(&out)?;
        }
        Command::TrainLda { vectors, manifest, model, dim } => {
            if let Some(d) = dim {
                cfg.backend.lda_dim = d;
            }
            let (vectors, labels) = labeled_vectors(&vectors, &manifest)?;
            let normed = vectors.iter().map(length_normalize).collect::<Result<Vec<_>, _>>()?;
            let n_classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
            let k = cfg.backend.lda_dim.min(lda_dim(normed[0].dim(), n_classes));
            let mut file = ModelFile::load_or_default(&model)?;
            file.lda = Some(train_lda(&normed, &labels, k)?);
            // a PLDA trained on the old projection no longer applies
            file.plda = None;
            save_model(&model, &file)?;
            cfg.echo_beside(&model)?;
            println!("lda {} -> {k}", normed[0].dim());
        }
        Command::TrainPlda { vectors, manifest, model, iters } => {
            if let Some(n) = iters {
                cfg.backend.plda_iters = n;
            }
            let (vectors, labels) = labeled_vectors(&vectors, &manifest)?;
            let mut file = ModelFile::load_or_default(&model)?;
            let prep = match &file.lda {
                Some(lda) => Scorer::new(ScoringMethod::LdaCosine, Some(lda.clone()), None)?,
                None => Scorer::new(ScoringMethod::Cosine, None, None)?,
            };
            let prepared = vectors.iter().map(|v| prep.prepare(v)).collect::<Result<Vec<_>, _>>()?;
            let (plda, objectives) = train_plda(&prepared, &labels, cfg.backend.plda_iters)?;
            for (k, o) in objectives.iter().enumerate() {
                println!("iteration {k} log-likelihood {o:.6}");
            }
            file.plda = Some(plda);
            save_model(&model, &file)?;
            cfg.echo_beside(&model)?;
        }
        Command::GenTrials { manifest, protocol, events, out } => {
            let m = load_manifest(&manifest)?;
            let events = match events {
                Some(s) => parse_event_set(&s)?,
                None => m.events().into_iter().filter(|e| e.is_trivial()).collect(),
            };
            let (header, lists) = build_trials(&m, protocol, &events, &cfg)?;
            let mut text = String::new();
            for h in header {
                writeln!(text, "# {h}")?;
            }
            for l in &lists {
                writeln!(text, "# event {} trials {} targets {}", l.event, l.len(), l.n_targets())?;
            }
            for t in lists.iter().flat_map(|l| &l.trials) {
                writeln!(text, "{t}")?;
            }
            write_file(&out, text.as_bytes())?;
            cfg.echo_beside(&out)?;
            println!("{} trials", lists.iter().map(TrialList::len).sum::<usize>());
        }
        Command::Score { trials, vectors, method, model, out } => {
            let trials = read_trials(&trials).with_context(|| format!("reading {}", trials.display()))?;
            let vectors: HashMap<String, SpeakerVector> =
                load_vectors(&vectors)?.into_iter().map(|v| (v.utt_id.clone(), v)).collect();
            let file = match model {
                Some(p) => load_model(&p)?,
                None => ModelFile::default(),
            };
            let scorer = Scorer::new(method, file.lda, file.plda)?;
            let scores = score_trials(&trials, &vectors, &scorer)?;
            ensure_parent(&out)?;
            write_scores(&out, &trials, &scores)?;
            cfg.echo_beside(&out)?;
        }
        Command::EvalEer { scores, trials, out } => {
            let (report, header) = eval_eer(&scores, &trials)?;
            println!("EER {:.4}", report.eer);
            if let Some(out) = out {
                ensure_parent(&out)?;
                report.save(&out, &header)?;
                cfg.echo_beside(&out)?;
            }
        }
        Command::TsneExport { features, manifest, model, out, max_per_group, speakers } => {
            if let Some(n) = max_per_group {
                cfg.viz.max_per_group = n;
            }
            let m = load_manifest(&manifest)?;
            let file = load_model(&model)?;
            let written = tsne_export(&m, file.require_dnn()?, &load_archive(&features)?, &out, &cfg, speakers)?;
            cfg.echo(&out)?;
            println!("wrote {written} speaker plots to {}", out.display());
        }
        Command::ServeListen { manifest, log, addr } => {
            let m = load_manifest(&manifest)?;
            ensure_parent(&log)?;
            cfg.echo_beside(&log)?;
            let svc = Arc::new(ListenService::open(m, &log)?);
            eprintln!("listening on http://{addr}");
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(tev_listen::serve(svc, addr))?;
        }
    }
    Ok(())
}

fn parse_event_set(s: &str) -> Result<Vec<EventType>> {
    Ok(match s {
        "trivial" => EventType::TRIVIAL.to_vec(),
        "disguise" => vec![EventType::Normal, EventType::Disguised],
        "all" => EventType::ALL.to_vec(),
        _ => s
            .split(',')
            .map(|e| e.trim().parse::<EventType>().map_err(|e| anyhow!("{e}")))
            .collect::<Result<_>>()?,
    })
}

fn build_trials(
    m: &CorpusManifest,
    protocol: TrialProtocol,
    events: &[EventType],
    cfg: &PipelineConfig,
) -> Result<(Vec<String>, Vec<TrialList>)> {
    Ok(match protocol {
        TrialProtocol::Exhaustive => (
            vec!["design: every unordered same-event utterance pair; same speaker = target".into()],
            events.iter().map(|&e| gen_exhaustive_trials(m, e)).collect::<Result<_, _>>()?,
        ),
        TrialProtocol::Human => (
            vec![format!(
                "design: {} sampled pairs per event, p_target {}, seed {}",
                cfg.eval.per_event,
                cfg.eval.p_target,
                cfg.seed()
            )],
            gen_human_trials(m, events, cfg.eval.per_event, cfg.eval.p_target, cfg.seed())?,
        ),
        TrialProtocol::Disguise => (
            vec!["design: every normal x disguised pair; same speaker = target".into()],
            vec![gen_disguise_trials(m)?],
        ),
    })
}

/// EER of `scores` against the labels in `trials`, matched by pair, plus
/// report header lines carried over from the trial file.
pub fn eval_eer(scores: &Path, trials: &Path) -> Result<(tev_core::eval::EvalReport, Vec<String>)> {
    let trial_list = read_trials(trials).with_context(|| format!("reading {}", trials.display()))?;
    let scored = read_scores(scores).with_context(|| format!("reading {}", scores.display()))?;
    let labels: HashMap<(&str, &str), bool> = trial_list.iter().map(|t| (t.key(), t.is_target)).collect();
    ensure!(
        labels.len() == trial_list.len(),
        "trial file {} lists a pair twice",
        trials.display()
    );
    ensure!(
        scored.len() == trial_list.len(),
        "{} scores for {} trials",
        scored.len(),
        trial_list.len()
    );
    let mut s = Vec::with_capacity(scored.len());
    let mut l = Vec::with_capacity(scored.len());
    for (a, b, score) in &scored {
        let probe = Trial { utt_a: a.clone(), utt_b: b.clone(), is_target: false };
        let label = labels.get(&probe.key()).ok_or_else(|| anyhow!("scored pair {a} {b} is not a trial"))?;
        s.push(*score);
        l.push(*label);
    }
    let report = compute_eer(&s, &l)?;
    let mut header: Vec<String> = fs::read_to_string(trials)?
        .lines()
        .filter_map(|line| line.strip_prefix("# ").map(str::to_string))
        .collect();
    header.push(format!("trials {}", trial_list.len()));
    Ok((report, header))
}

fn tsne_export(
    m: &CorpusManifest,
    net: &FrameNet,
    feats: &[(String, FeatureMatrix)],
    out: &Path,
    cfg: &PipelineConfig,
    limit: Option<usize>,
) -> Result<usize> {
    let by_id: HashMap<&str, &FeatureMatrix> = feats.iter().map(|(id, f)| (id.as_str(), f)).collect();
    // utterances per (speaker, style), in manifest order
    let mut groups: BTreeMap<String, [Vec<&str>; 2]> = BTreeMap::new();
    for r in &m.records {
        let slot = match r.event {
            EventType::Normal => 0,
            EventType::Disguised => 1,
            _ => continue,
        };
        groups.entry(r.spk_id.clone()).or_default()[slot].push(&r.utt_id);
    }
    ensure!(!groups.is_empty(), "manifest has no normal or disguised utterances");
    let mut metadata = vec![
        "frame-level deep features of the speaker network".to_string(),
        format!("at most {} frames per (speaker, style), seed {}", cfg.viz.max_per_group, cfg.seed()),
        cfg.viz.tsne.to_string(),
    ];
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for (spk, styles) in groups.iter().take(limit.unwrap_or(usize::MAX)) {
        let mut parts = Vec::new();
        for (slot, utts) in styles.iter().enumerate() {
            let mut frames = Vec::new();
            for id in utts {
                let f = by_id.get(id).ok_or_else(|| anyhow!("no features for {id}"))?;
                frames.push(net.forward(f)?.features);
            }
            let refs: Vec<&FeatureMatrix> = frames.iter().collect();
            let all = if refs.is_empty() { None } else { Some(FeatureMatrix::concat(&refs)) };
            parts.push((if slot == 0 { Style::Normal } else { Style::Disguised }, all));
        }
        let sizes: Vec<usize> = parts.iter().map(|(_, f)| f.as_ref().map_or(0, FeatureMatrix::rows)).collect();
        let picks = subsample_rows(&sizes, cfg.viz.max_per_group, cfg.seed());
        let mut chosen = Vec::new();
        let mut spk_labels = Vec::new();
        for ((style, f), pick) in parts.iter().zip(&picks) {
            if let Some(f) = f {
                chosen.push(f.select_rows(pick));
                spk_labels.extend(pick.iter().map(|_| (spk.clone(), *style)));
            }
        }
        let x = FeatureMatrix::concat(&chosen.iter().collect::<Vec<_>>());
        let n = x.rows();
        if n < 5 {
            log::warn!("speaker {spk}: {n} frames, too few for t-SNE; skipped");
            continue;
        }
        let mut tcfg: TsneConfig = cfg.viz.tsne.clone();
        let cap = (n as f64 - 1.0) / 3.0;
        if tcfg.perplexity >= n as f64 / 3.0 {
            tcfg.perplexity = cap;
            metadata.push(format!("speaker {spk}: perplexity lowered to {cap} for {n} points"));
        }
        coords.extend(tsne(&x, &tcfg)?.embedding);
        labels.extend(spk_labels);
    }
    let plot = export_plot_data(&coords, &labels, metadata)?;
    fs::create_dir_all(out)?;
    plot.save(&out.join("all.tsv"))?;
    Ok(plot.save_per_speaker(&out.join("speakers"))?.len())
}

fn labeled_vectors(vectors: &Path, manifest: &Path) -> Result<(Vec<SpeakerVector>, Vec<String>)> {
    let vectors = load_vectors(vectors)?;
    ensure!(!vectors.is_empty(), "no vectors");
    let labels = vector_speakers(&load_manifest(manifest)?, &vectors)?;
    Ok((vectors, labels))
}

fn ensure_parent(file: &Path) -> Result<()> {
    fs::create_dir_all(parent_dir(file)).with_context(|| format!("creating directory for {}", file.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::load(path).with_context(|| format!("reading model {}", path.display()))
}

fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    ensure_parent(path)?;
    file.save(path).with_context(|| format!("writing model {}", path.display()))
}

fn load_archive(path: &Path) -> Result<Vec<(String, FeatureMatrix)>> {
    let a = read_archive(path).with_context(|| format!("reading archive {}", path.display()))?;
    if a.is_empty() {
        bail!("archive {} is empty", path.display());
    }
    Ok(a)
}

fn save_archive(path: &Path, records: &[(String, FeatureMatrix)]) -> Result<()> {
    ensure_parent(path)?;
    write_archive(path, records.iter().map(|(id, f)| (id.as_str(), f)))
        .with_context(|| format!("writing archive {}", path.display()))
}

fn load_stats(path: &Path) -> Result<Vec<(String, tev_core::gmm::BaumWelchStats)>> {
    load_archive(path)?
        .into_iter()
        .map(|(id, m)| Ok((id.clone(), stats_from_matrix(&id, &m)?)))
        .collect()
}

fn load_vectors(path: &Path) -> Result<Vec<SpeakerVector>> {
    read_vectors(path).with_context(|| format!("reading vectors {}", path.display()))
}

fn save_vectors(path: &Path, vectors: &[SpeakerVector]) -> Result<()> {
    ensure_parent(path)?;
    write_vectors(path, vectors).with_context(|| format!("writing vectors {}", path.display()))
}
