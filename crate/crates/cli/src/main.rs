use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use avsel::autodiff::checkpoint::sha256_hex;
use avsel::config::{RunConfig, System};
use avsel::corpus::{self, ConditionSpec, ManifestRecord, Noise};
use avsel::data::{feature_tensor, EvalSet, TrainData, Utterance};
use avsel::eval::{
    run_grid, AudioOnlyScorer, E2eScorer, EvalReport, Metric, ReportMeta, Scorer, SelectorScorer, TrackCache,
    TwoStepScorer,
};
use avsel::report::{emit_plot_data, render_table, Layout};
use avsel::system::{infer_two_step, loop_rows, train_av_asr, train_e2e, train_ss, Trained};
use avsel::visual::SyncedVideo;
use avsel::{Error, Result};

#[derive(Parser)]
#[command(name = "avsel", version, about = "Audio-visual speaker selection and speech recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one system on a single-track manifest.
    Train {
        #[arg(value_enum)]
        which: TrainWhich,
        #[command(flatten)]
        run: RunArgs,
        /// Single-track training manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Visual frontend donor for e2e.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transcribe every record of a multi-track manifest.
    Infer {
        #[arg(value_enum)]
        which: InferWhich,
        #[arg(long)]
        manifest: PathBuf,
        /// e2e checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Selector checkpoint (two-step).
        #[arg(long)]
        ss: Option<PathBuf>,
        /// Single-track A/V checkpoint (two-step, oracle).
        #[arg(long)]
        av: Option<PathBuf>,
        /// JSON lines of hypotheses; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score checkpoints over a grid of noise conditions and track counts.
    Eval {
        #[arg(value_enum)]
        metric: MetricArg,
        /// Single-track evaluation manifest; tracks and noise are built from it.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ss: Option<PathBuf>,
        #[arg(long)]
        e2e: Option<PathBuf>,
        /// Single-track A/V checkpoint: oracle, and two-step together with --ss.
        #[arg(long)]
        av: Option<PathBuf>,
        #[arg(long)]
        audio: Option<PathBuf>,
        /// Comma-separated cells such as `clean-n2,snr0-n4`, or `all`.
        #[arg(long, default_value = "all")]
        conditions: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        dataset: String,
        /// Corpus settings used for babble (config file `synth` table).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate or augment corpora.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Render reports as tables and plot series.
    Report {
        /// Report files to merge; they must come from one evaluation setup.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        layout: LayoutArg,
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusAction {
    /// Synthesize talking-face utterances.
    Gen {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a multi-track, noise-augmented manifest from a single-track one.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        noise: Noise,
        #[arg(long)]
        tracks: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Override a configuration key, e.g. `--set train.steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainWhich {
    Ss,
    Av,
    Audio,
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum InferWhich {
    TwoStep,
    E2e,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    Wer,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Table1,
    Table2,
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config(format!("empty override key in {key:?}")))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Config file (or defaults), then `--set` overrides, then named flags.
fn load_config(system: System, run: &RunArgs, extra: &[(&str, Option<toml::Value>)]) -> Result<RunConfig> {
    let base = match &run.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => RunConfig::new(system, run.seed).to_toml(),
    };
    let mut doc: toml::Value = toml::from_str(&base).map_err(|e| Error::Config(e.to_string()))?;
    set_path(&mut doc, "system", toml::Value::String(system.to_string()))?;
    for o in &run.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        set_path(&mut doc, k.trim(), parse_value(v.trim()))?;
    }
    let seed = i64::try_from(run.seed).map_err(|_| Error::Config("seed must fit in 63 bits".into()))?;
    set_path(&mut doc, "seed", toml::Value::Integer(seed))?;
    let named = [
        ("train.steps", run.steps.map(|v| toml::Value::Integer(v as i64))),
        ("train.batch", run.batch.map(|v| toml::Value::Integer(v as i64))),
        ("train.schedule.peak_lr", run.lr.map(toml::Value::Float)),
    ];
    for (k, v) in named.into_iter().chain(extra.iter().cloned()) {
        if let Some(v) = v {
            set_path(&mut doc, k, v)?;
        }
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = RunConfig::from_toml(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn synth_config(config: Option<&Path>) -> Result<corpus::SynthConfig> {
    match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            #[derive(serde::Deserialize)]
            struct Only {
                #[serde(default)]
                synth: corpus::SynthConfig,
            }
            let only: Only = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            only.synth.validate()?;
            Ok(only.synth)
        }
        None => Ok(corpus::SynthConfig::default()),
    }
}

fn load_utterances(manifest: &Path) -> Result<Vec<Utterance>> {
    let records = corpus::read_manifest(manifest)?;
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records", manifest.display())));
    }
    records.iter().map(|r| Utterance::load(manifest, r)).collect()
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

fn train(which: TrainWhich, run: &RunArgs, manifest: Option<&Path>, warm: Option<&Path>, out: &Path) -> Result<()> {
    let system = match which {
        TrainWhich::Ss => System::Ss,
        TrainWhich::Av => System::AvSingle,
        TrainWhich::Audio => System::AudioOnly,
        TrainWhich::E2e => System::E2e,
    };
    let cfg = load_config(
        system,
        run,
        &[
            ("data.train_manifest", manifest.map(path_value)),
            ("warm_start", warm.map(path_value)),
        ],
    )?;
    let manifest = cfg
        .data
        .train_manifest
        .clone()
        .ok_or_else(|| Error::Config("no training manifest (--manifest or data.train_manifest)".into()))?;
    let data = TrainData::new(load_utterances(&manifest)?, cfg.seed, &cfg.synth)?;
    log::info!("{} training utterances, config digest {}", data.utts.len(), cfg.digest());
    let outcome = match system {
        System::Ss => train_ss(&cfg, &data, Some(out))?,
        System::AvSingle | System::AudioOnly => train_av_asr(&cfg, &data, system == System::AudioOnly, Some(out))?,
        System::E2e => {
            let donor = cfg
                .warm_start
                .as_deref()
                .map(avsel::autodiff::Checkpoint::load)
                .transpose()?;
            train_e2e(&cfg, &data, donor.as_ref(), Some(out))?
        }
        System::TwoStep => unreachable!("not a training target"),
    };
    let last = outcome.log.last().expect("at least one step");
    println!(
        "{system}: {} steps, final loss {:.4}, checkpoint {} ({})",
        outcome.log.len(),
        last.loss,
        out.display(),
        outcome.checkpoint.digest()
    );
    Ok(())
}

#[derive(Serialize)]
struct Hypothesis {
    id: String,
    hypothesis: String,
    reference: String,
    ground_truth_index: usize,
    /// Per-frame selected track.
    trace: Vec<usize>,
}

fn need(p: Option<&PathBuf>, flag: &str) -> Result<Trained> {
    Trained::load(p.ok_or_else(|| Error::Config(format!("{flag} is required")))?)
}

fn infer(which: InferWhich, manifest: &Path, ck: Option<&PathBuf>, ss: Option<&PathBuf>, av: Option<&PathBuf>) -> Result<Vec<Hypothesis>> {
    let (main, ss) = match which {
        InferWhich::E2e => (need(ck, "--checkpoint")?, None),
        InferWhich::TwoStep => (need(av, "--av")?, Some(need(ss, "--ss")?)),
        InferWhich::Oracle => (need(av, "--av")?, None),
    };
    let mut out = Vec::new();
    for rec in corpus::read_manifest(manifest)? {
        let audio = avsel::acoustic::Waveform::read_wav(&corpus::resolve(manifest, &rec.audio_path))?;
        let features = feature_tensor(&audio)?;
        let frames = features.shape()[0];
        let videos = rec
            .video_paths
            .iter()
            .map(|p| SyncedVideo::read(&corpus::resolve(manifest, p)))
            .collect::<Result<Vec<_>>>()?;
        if videos.is_empty() {
            return Err(Error::Data(format!("record {} has no face tracks", rec.id)));
        }
        let tracks_for = |m: &Trained| -> Result<Vec<_>> {
            videos
                .iter()
                .map(|v| loop_rows(&m.visual_features(v)?, frames))
                .collect()
        };
        let (hyp, trace) = match which {
            InferWhich::E2e => {
                let o = main.infer_e2e(&features, &tracks_for(&main)?)?;
                (o.transcript, o.trace)
            }
            InferWhich::TwoStep => {
                let ss = ss.as_ref().expect("loaded above");
                infer_two_step(Some(ss), &main, &features, &tracks_for(ss)?, &tracks_for(&main)?, None)?
            }
            InferWhich::Oracle => {
                if rec.ground_truth_index >= videos.len() {
                    return Err(Error::Data(format!("record {}: ground truth index out of range", rec.id)));
                }
                infer_two_step(None, &main, &features, &[], &tracks_for(&main)?, Some(rec.ground_truth_index))?
            }
        };
        out.push(Hypothesis {
            id: rec.id.clone(),
            hypothesis: hyp.text(),
            reference: rec.transcript.clone(),
            ground_truth_index: rec.ground_truth_index,
            trace,
        });
    }
    Ok(out)
}

fn parse_conditions(spec: &str, seed: u64) -> Result<Vec<ConditionSpec>> {
    if spec == "all" {
        return [Noise::Clean, Noise::Snr20, Noise::Snr10, Noise::Snr0, Noise::Overlap]
            .into_iter()
            .flat_map(|n| corpus::TRACK_COUNTS.map(|t| (n, t)))
            .map(|(n, t)| ConditionSpec::new(n, t, seed))
            .collect();
    }
    spec.split(',')
        .map(|cell| {
            let (noise, tracks) = cell
                .trim()
                .rsplit_once("-n")
                .ok_or_else(|| Error::Config(format!("condition {cell:?} is not NOISE-nTRACKS")))?;
            let tracks = tracks
                .parse()
                .map_err(|_| Error::Config(format!("condition {cell:?}: bad track count")))?;
            ConditionSpec::new(noise.parse()?, tracks, seed)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn eval(
    metric: Metric,
    manifest: &Path,
    checkpoints: [Option<&PathBuf>; 4],
    conditions: &str,
    seed: u64,
    dataset: &str,
    config: Option<&Path>,
    out: &Path,
) -> Result<EvalReport> {
    let synth = synth_config(config)?;
    let conds = parse_conditions(conditions, seed)?;
    let [ss, e2e, av, audio] = checkpoints.map(|p| p.map(|p| Trained::load(p)).transpose());
    let (ss, e2e, av, audio) = (ss?, e2e?, av?, audio?);
    let set = EvalSet::new(load_utterances(manifest)?, seed, &synth)?;

    let ss_cache = ss.as_ref().map(TrackCache::new);
    let selector = ss.as_ref().map(|m| SelectorScorer(TrackCache::new(m)));
    let end_to_end = e2e.as_ref().map(|m| E2eScorer(TrackCache::new(m)));
    let two_step = match (&ss_cache, &av) {
        (Some(_), Some(m)) => Some(TwoStepScorer {
            ss: ss.as_ref().map(TrackCache::new),
            av: TrackCache::new(m),
        }),
        _ => None,
    };
    let oracle = av.as_ref().map(|m| TwoStepScorer { ss: None, av: TrackCache::new(m) });
    let audio_only = audio.as_ref().map(AudioOnlyScorer);

    let mut scorers: Vec<&dyn Scorer> = Vec::new();
    match metric {
        Metric::Accuracy => {
            scorers.extend(selector.as_ref().map(|s| s as &dyn Scorer));
            scorers.extend(end_to_end.as_ref().map(|s| s as &dyn Scorer));
        }
        Metric::Wer => {
            scorers.extend(audio_only.as_ref().map(|s| s as &dyn Scorer));
            scorers.extend(two_step.as_ref().map(|s| s as &dyn Scorer));
            scorers.extend(end_to_end.as_ref().map(|s| s as &dyn Scorer));
            scorers.extend(oracle.as_ref().map(|s| s as &dyn Scorer));
        }
    }
    if scorers.is_empty() {
        return Err(Error::Config("no checkpoint given for this metric".into()));
    }
    #[derive(Serialize)]
    struct Setup<'a> {
        dataset: &'a str,
        seed: u64,
        manifest_digest: String,
        synth: &'a corpus::SynthConfig,
    }
    let manifest_bytes = std::fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let setup = Setup {
        dataset,
        seed,
        manifest_digest: sha256_hex(&manifest_bytes),
        synth: &synth,
    };
    let meta = ReportMeta {
        seed,
        checkpoints: Default::default(),
        config_digest: sha256_hex(serde_json::to_string(&setup).expect("serializes").as_bytes()),
    };
    let report = run_grid(dataset, metric, &set, &conds, &scorers, meta)?;
    report.save(out)?;
    Ok(report)
}

fn corpus_gen(run: &RunArgs, count: usize, out: &Path) -> Result<()> {
    let cfg = load_config(System::E2e, run, &[])?;
    let base = corpus::generate(cfg.seed, count, &cfg.synth)?;
    for dir in ["audio", "video"] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(base.len());
    for u in &base {
        let utt = Utterance::from_synth(u)?;
        let audio = PathBuf::from("audio").join(format!("{}.wav", u.id));
        let video = PathBuf::from("video").join(format!("{}.avtv", u.id));
        utt.waveform.write_wav(&out.join(&audio))?;
        utt.video.write(&out.join(&video))?;
        records.push(ManifestRecord {
            id: u.id.clone(),
            audio_path: audio,
            video_paths: vec![video],
            transcript: u.transcript.text(),
            ground_truth_index: 0,
            condition: Noise::Clean.to_string(),
            seed: u.seed,
            extra: Default::default(),
        });
    }
    corpus::write_manifest(&out.join("manifest.jsonl"), &records)?;
    println!("wrote {} utterances to {}", records.len(), out.display());
    Ok(())
}

fn corpus_augment(manifest: &Path, noise: Noise, tracks: usize, seed: u64, config: Option<&Path>, out: &Path) -> Result<()> {
    let synth = synth_config(config)?;
    let cond = ConditionSpec::new(noise, tracks, seed)?;
    let records = corpus::read_manifest(manifest)?;
    let utts = records
        .iter()
        .map(|r| Utterance::load(manifest, r))
        .collect::<Result<Vec<_>>>()?;
    let set = EvalSet::new(utts, seed, &synth)?;
    let audio_dir = out.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let manifest_dir = std::path::absolute(manifest.parent().unwrap_or(Path::new(".")))
        .map_err(|e| Error::io(manifest, e))?;
    let mut out_records = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let ex = set.example(i, &cond)?;
        let wave = corpus::augment_waveform(&set.utts, i, noise, seed, &synth)?;
        let audio = PathBuf::from("audio").join(format!("{}.wav", rec.id));
        wave.write_wav(&out.join(&audio))?;
        let video_paths = ex
            .tracks
            .iter()
            .map(|&t| manifest_dir.join(&records[t].video_paths[0]))
            .collect();
        out_records.push(ManifestRecord {
            id: rec.id.clone(),
            audio_path: audio,
            video_paths,
            transcript: rec.transcript.clone(),
            ground_truth_index: ex.ground_truth,
            condition: cond.tag(),
            seed,
            extra: Default::default(),
        });
    }
    corpus::write_manifest(&out.join("manifest.jsonl"), &out_records)?;
    println!("wrote {} {} examples to {}", out_records.len(), cond.tag(), out.display());
    Ok(())
}

fn report(inputs: &[PathBuf], layout: Layout, plot_dir: Option<&Path>) -> Result<()> {
    let reports = inputs
        .iter()
        .map(|p| EvalReport::load(p))
        .collect::<Result<Vec<_>>>()?;
    let merged = EvalReport::merge(&reports)?;
    print!("{}", render_table(&merged, layout)?);
    if let Some(dir) = plot_dir {
        for f in emit_plot_data(&merged, dir)? {
            log::info!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            which,
            run,
            manifest,
            warm_start,
            out,
        } => train(which, &run, manifest.as_deref(), warm_start.as_deref(), &out),
        Command::Infer {
            which,
            manifest,
            checkpoint,
            ss,
            av,
            out,
        } => {
            let hyps = infer(which, &manifest, checkpoint.as_ref(), ss.as_ref(), av.as_ref())?;
            let text: String = hyps
                .iter()
                .map(|h| serde_json::to_string(h).expect("serializes") + "\n")
                .collect();
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Eval {
            metric,
            manifest,
            ss,
            e2e,
            av,
            audio,
            conditions,
            seed,
            dataset,
            config,
            out,
        } => {
            let metric = match metric {
                MetricArg::Accuracy => Metric::Accuracy,
                MetricArg::Wer => Metric::Wer,
            };
            let r = eval(
                metric,
                &manifest,
                [ss.as_ref(), e2e.as_ref(), av.as_ref(), audio.as_ref()],
                &conditions,
                seed,
                &dataset,
                config.as_deref(),
                &out,
            )?;
            print!("{}", r.to_table());
            Ok(())
        }
        Command::Corpus { action } => match action {
            CorpusAction::Gen { run, count, out } => corpus_gen(&run, count, &out),
            CorpusAction::Augment {
                manifest,
                noise,
                tracks,
                seed,
                config,
                out,
            } => corpus_augment(&manifest, noise, tracks, seed, config.as_deref(), &out),
        },
        Command::Report {
            inputs,
            layout,
            plot_dir,
        } => {
            let layout = match layout {
                LayoutArg::Table1 => Layout::Table1,
                LayoutArg::Table2 => Layout::Table2,
            };
            report(&inputs, layout, plot_dir.as_deref())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) => 2,
        Error::NonFinite(_) => 4,
        Error::Shape { .. } | Error::NonScalarRoot(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
