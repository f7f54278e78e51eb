use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use mi_decode::classify::ClassifierKind;
use mi_decode::config::{ObjectiveKind, PipelineConfig};
use mi_decode::decoder::{train_decoder, Decoder, FilterMode, Provenance};
use mi_decode::dsp::trial_spans;
use mi_decode::eval::{eval_samples, pca_sweep, runwise_cv, CvReport, SampleReport, SweepReport};
use mi_decode::evidence::{
    grid_search, replay_session, stream_replay, write_event_line, EvidenceConfig, GridSearch, TrialReport,
};
use mi_decode::features::FeatureKind;
use mi_decode::io::{
    import_csv, load_session, save_session, CsvImport, EventKind, Recording, SessionKind, SessionMeta,
};
use mi_decode::synth::{generate_study, SynthSpec};
use mi_decode::{Error, Result};

use crate::{ClassifierArg, Cli, Command, FeatureArg, FilterArg, GlobalArgs, ObjectiveArg, SessionKindArg};

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub dir: String,
    pub kind: SessionKind,
    pub n_runs: usize,
    pub n_trials: usize,
    pub fingerprint: String,
}

#[derive(Debug, Serialize)]
pub struct DecoderSummary {
    pub dir: String,
    pub k: Option<usize>,
    pub feature_dim: usize,
    pub classifier: ClassifierKind,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize)]
pub struct GridBlock {
    pub decoder: String,
    pub session: String,
    pub winner: EvidenceConfig,
    pub report: TrialReport,
}

#[derive(Debug, Serialize)]
pub struct ReproReport {
    pub sessions: Vec<SessionSummary>,
    pub cv: CvReport,
    pub cv_shuffled: CvReport,
    pub samples: BTreeMap<String, SampleReport>,
    pub trials: Vec<GridBlock>,
    pub decoders: BTreeMap<String, Provenance>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Generate { out: String, spec: SynthSpec, sessions: Vec<SessionSummary> },
    ImportCsv { out: String, session: SessionSummary, n_samples: usize, n_channels: usize },
    Train(DecoderSummary),
    Cv(CvReport),
    EvalSamples { decoder: String, session: String, report: SampleReport },
    EvalTrials { decoder: String, session: String, filter_mode: FilterMode, report: TrialReport },
    PcaSweep(SweepReport),
    GridSearch { decoder: String, session: String, search: GridSearch },
    Replay { decoder: String, session: String, events: usize, report: TrialReport },
    Repro(Box<ReproReport>),
}

#[derive(Debug, Serialize)]
struct Envelope<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: String,
    config: &'a PipelineConfig,
    result: &'a Outcome,
}

fn build_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(k) = g.pca {
        cfg.pca_k = Some(k);
    }
    if let Some(f) = g.features {
        cfg.features = match f {
            FeatureArg::Raw => FeatureKind::Raw,
            FeatureArg::Psd => FeatureKind::Psd,
        };
    }
    if let Some(c) = g.classifier {
        cfg.classifier = match c {
            ClassifierArg::Lda => ClassifierKind::Lda,
            ClassifierArg::NearestCentroid => ClassifierKind::NearestCentroid,
        };
    }
    if let Some(m) = g.filter_mode {
        cfg.filter_mode = filter_mode(m);
    }
    if g.no_car {
        cfg.car = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn filter_mode(m: FilterArg) -> FilterMode {
    match m {
        FilterArg::ZeroPhase => FilterMode::ZeroPhase,
        FilterArg::Causal => FilterMode::Causal,
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn load(dir: &Path) -> Result<(Recording, SessionMeta)> {
    info!("loading {}", dir.display());
    load_session(dir)
}

fn load_for(cfg: &PipelineConfig, dir: &Path) -> Result<(Recording, SessionMeta)> {
    let (rec, meta) = load(dir)?;
    cfg.validate_for(rec.fs(), rec.n_channels())?;
    Ok((rec, meta))
}

fn load_decoder(dir: &Path) -> Result<Decoder> {
    info!("loading decoder {}", dir.display());
    Decoder::load(dir)
}

fn summary(dir: &Path, rec: &Recording, meta: &SessionMeta) -> Result<SessionSummary> {
    Ok(SessionSummary {
        dir: display(dir),
        kind: meta.session_kind,
        n_runs: meta.n_runs,
        n_trials: trial_spans(rec)?.len(),
        fingerprint: rec.fingerprint(),
    })
}

fn decoder_summary(dir: &Path, d: &Decoder) -> DecoderSummary {
    DecoderSummary {
        dir: display(dir),
        k: d.k(),
        feature_dim: d.feature_dim,
        classifier: d.config.classifier,
        provenance: d.provenance.clone(),
    }
}

fn parse_label_map(entries: &[String]) -> Result<BTreeMap<i64, EventKind>> {
    entries
        .iter()
        .map(|e| {
            let (code, name) =
                e.split_once('=').ok_or_else(|| Error::BadConfig(format!("label map entry {e:?} is not code=Kind")))?;
            let code = code.trim().parse::<i64>().map_err(|_| Error::BadConfig(format!("bad event code in {e:?}")))?;
            let kind = EventKind::parse(name.trim())
                .ok_or_else(|| Error::BadConfig(format!("unknown event kind {name:?}")))?;
            Ok((code, kind))
        })
        .collect()
}

fn evidence_grid(cfg: &PipelineConfig, thetas: Vec<f64>, deltas: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let thetas = if thetas.is_empty() { cfg.thetas.clone() } else { thetas };
    let deltas = if deltas.is_empty() { cfg.deltas.clone() } else { deltas };
    for &t in &thetas {
        for &d in &deltas {
            EvidenceConfig::new(t, d)?;
        }
    }
    Ok((thetas, deltas))
}

fn study_session(root: &Path, kind: SessionKind) -> Result<PathBuf> {
    let dir = root.join(kind.dir_name());
    if !dir.is_dir() {
        return Err(Error::MissingSession(display(&dir)));
    }
    Ok(dir)
}

fn repro(cfg: &PipelineConfig, study: &Path, save: Option<&Path>) -> Result<ReproReport> {
    let kinds = [SessionKind::Offline, SessionKind::Online1, SessionKind::Online2];
    let dirs = kinds.iter().map(|&k| study_session(study, k)).collect::<Result<Vec<_>>>()?;
    let loaded = dirs.iter().map(|d| load_for(cfg, d)).collect::<Result<Vec<_>>>()?;
    let sessions = dirs.iter().zip(&loaded).map(|(d, (r, m))| summary(d, r, m)).collect::<Result<Vec<_>>>()?;
    let (off, on1, on2) = (&loaded[0].0, &loaded[1].0, &loaded[2].0);
    let dc = cfg.decoder_config();

    info!("run-wise cross-validation");
    let cv = runwise_cv(off, &dc, None)?;
    let cv_shuffled = runwise_cv(off, &dc, Some(cfg.shuffle_seed))?;

    info!("training and sample-level evaluation");
    let base = train_decoder(&[off], &dc)?;
    let tuned = train_decoder(&[off, on1], &dc)?;
    if let Some(root) = save {
        base.save(&root.join("base"))?;
        tuned.save(&root.join("tuned"))?;
    }
    let samples = BTreeMap::from([
        ("base_online1".to_string(), eval_samples(&base, on1)?),
        ("base_online2".to_string(), eval_samples(&base, on2)?),
        ("tuned_online2".to_string(), eval_samples(&tuned, on2)?),
    ]);

    info!("evidence grid search");
    let mut trials = Vec::new();
    for (name, dec, session, rec) in
        [("base", &base, "online1", on1), ("base", &base, "online2", on2), ("tuned", &tuned, "online2", on2)]
    {
        let g = grid_search(dec, rec, &cfg.thetas, &cfg.deltas, cfg.objective())?;
        let report = replay_session(dec, rec, g.winner)?;
        trials.push(GridBlock { decoder: name.into(), session: session.into(), winner: g.winner, report });
    }
    let decoders = BTreeMap::from([
        ("base".to_string(), base.provenance.clone()),
        ("tuned".to_string(), tuned.provenance.clone()),
    ]);
    Ok(ReproReport { sessions, cv, cv_shuffled, samples, trials, decoders })
}

fn execute(cfg: &PipelineConfig, command: Command) -> Result<(&'static str, Outcome)> {
    Ok(match command {
        Command::Generate { out, seed, erd_depth, noise_sigma } => {
            let mut spec = SynthSpec { seed, ..SynthSpec::default() };
            if let Some(d) = erd_depth {
                spec.erd_depth = d;
            }
            if let Some(n) = noise_sigma {
                spec.noise_sigma = n;
            }
            let paths = generate_study(&spec, &out)?;
            let sessions = [paths.offline, paths.online1, paths.online2]
                .iter()
                .map(|d| {
                    let (r, m) = load(d)?;
                    summary(d, &r, &m)
                })
                .collect::<Result<Vec<_>>>()?;
            ("generate", Outcome::Generate { out: display(&out), spec, sessions })
        }
        Command::ImportCsv {
            csv,
            fs: rate,
            out,
            no_header,
            event_column,
            run_column,
            label_map,
            subject,
            session_kind,
        } => {
            let mut opts = CsvImport::new(rate);
            opts.has_header = !no_header;
            opts.event_column = event_column;
            opts.run_column = run_column;
            opts.label_map = parse_label_map(&label_map)?;
            let rec = import_csv(&csv, &opts)?;
            let n_runs = rec.events().iter().map(|e| e.run_index + 1).max().unwrap_or(1);
            let meta = SessionMeta {
                subject,
                sensor: mi_decode::io::Sensor::Gel,
                session_kind: match session_kind {
                    SessionKindArg::Offline => SessionKind::Offline,
                    SessionKindArg::Online1 => SessionKind::Online1,
                    SessionKindArg::Online2 => SessionKind::Online2,
                },
                n_runs,
                fs: rec.fs(),
                channel_labels: rec.channel_labels().to_vec(),
            };
            save_session(&rec, &meta, &out)?;
            let session = summary(&out, &rec, &meta)?;
            (
                "import-csv",
                Outcome::ImportCsv {
                    out: display(&out),
                    session,
                    n_samples: rec.n_samples(),
                    n_channels: rec.n_channels(),
                },
            )
        }
        Command::Train { session, out } => {
            let recs = session.iter().map(|d| load_for(cfg, d).map(|(r, _)| r)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Recording> = recs.iter().collect();
            let dec = train_decoder(&refs, &cfg.decoder_config())?;
            dec.save(&out)?;
            ("train", Outcome::Train(decoder_summary(&out, &dec)))
        }
        Command::Cv { session, shuffle_seed } => {
            let (rec, _) = load_for(cfg, &session)?;
            ("cv", Outcome::Cv(runwise_cv(&rec, &cfg.decoder_config(), shuffle_seed)?))
        }
        Command::EvalSamples { decoder, session } => {
            let dec = load_decoder(&decoder)?;
            let (rec, _) = load(&session)?;
            let report = eval_samples(&dec, &rec)?;
            ("eval-samples", Outcome::EvalSamples { decoder: display(&decoder), session: display(&session), report })
        }
        Command::EvalTrials { decoder, session, theta, delta, causal } => {
            let mut dec = load_decoder(&decoder)?;
            if causal {
                dec = dec.with_filter_mode(FilterMode::Causal);
            }
            let (rec, _) = load(&session)?;
            let report = replay_session(&dec, &rec, EvidenceConfig::new(theta, delta)?)?;
            (
                "eval-trials",
                Outcome::EvalTrials {
                    decoder: display(&decoder),
                    session: display(&session),
                    filter_mode: dec.config.preprocess.filter_mode,
                    report,
                },
            )
        }
        Command::PcaSweep { session, ks } => {
            let (rec, _) = load(&session)?;
            let mut c = cfg.clone();
            c.pca_k = None;
            c.validate_for(rec.fs(), rec.n_channels())?;
            let ks = if ks.is_empty() { cfg.sweep_ks.clone() } else { ks };
            ("pca-sweep", Outcome::PcaSweep(pca_sweep(&rec, &c.decoder_config(), &ks)?))
        }
        Command::GridSearch { decoder, session, thetas, deltas, objective, csv } => {
            let dec = load_decoder(&decoder)?;
            let (rec, _) = load(&session)?;
            let (thetas, deltas) = evidence_grid(cfg, thetas, deltas)?;
            let mut c = cfg.clone();
            if let Some(o) = objective {
                c.objective = match o {
                    ObjectiveArg::Lexicographic => ObjectiveKind::Lexicographic,
                    ObjectiveArg::Weighted => ObjectiveKind::Weighted,
                };
            }
            let search = grid_search(&dec, &rec, &thetas, &deltas, c.objective())?;
            if let Some(path) = csv {
                fs::write(&path, search.to_csv()).map_err(|e| Error::IoFailure { path: path.clone(), source: e })?;
            }
            ("grid-search", Outcome::GridSearch { decoder: display(&decoder), session: display(&session), search })
        }
        Command::Replay { decoder, session, theta, delta, realtime, quiet } => {
            let dec = load_decoder(&decoder)?.with_filter_mode(FilterMode::Causal);
            let (rec, _) = load(&session)?;
            let mut events = 0usize;
            let stderr = std::io::stderr();
            let mut err = stderr.lock();
            let report = stream_replay(&dec, &rec, EvidenceConfig::new(theta, delta)?, realtime, |e| {
                events += 1;
                if !quiet {
                    let _ = write_event_line(&mut err, e);
                }
            })?;
            ("replay", Outcome::Replay { decoder: display(&decoder), session: display(&session), events, report })
        }
        Command::Repro { study, save_decoders } => {
            ("repro", Outcome::Repro(Box::new(repro(cfg, &study, save_decoders.as_deref())?)))
        }
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.global)?;
    let (name, outcome) = execute(&cfg, cli.command)?;
    let envelope = Envelope {
        tool: "mi-decode",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        config_hash: cfg.hash(),
        config: &cfg,
        result: &outcome,
    };
    let json = serde_json::to_string_pretty(&envelope).expect("report serializes") + "\n";
    if let Some(path) = &cli.global.report {
        fs::write(path, &json).map_err(|e| Error::IoFailure { path: path.clone(), source: e })?;
    }
    let text = if cli.global.text { crate::render::text(name, &envelope.config_hash, &outcome) } else { json };
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).map_err(|e| Error::IoFailure { path: PathBuf::from("<stdout>"), source: e })
}
