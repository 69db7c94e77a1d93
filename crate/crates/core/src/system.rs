//! Assembles the modules into the trainable systems and runs them.
//!
//! Parameter namespaces: `visual/*` for the A/V and e2e frontend,
//! `selector/keys/*` for the separately trained selector's own frontend,
//! `selector/query/*` and `selector/W` for the attention, `asr/*` for the
//! transducer.

use std::path::Path;

use rand::Rng;

use crate::attention::{self, AttentionHead, Attended};
use crate::autodiff::{adam_step, clip_global_norm, Checkpoint, Graph, NodeId, OptimizerState, ParamStore, Tensor};
use crate::config::{ModelConfig, RunConfig, System};
use crate::data::TrainData;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::transducer::{Transcript, Transducer};
use crate::visual::{SyncedVideo, VisualFrontend};

pub const VISUAL_PREFIX: &str = "visual";
pub const DEFAULT_MAX_SYMBOLS: usize = 4;

/// The modules one system is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub system: System,
    pub config: ModelConfig,
    pub frontend: Option<VisualFrontend>,
    pub head: Option<AttentionHead>,
    pub asr: Option<Transducer>,
}

impl Model {
    pub fn new(system: System, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let frontend = |prefix: &str| VisualFrontend::new(config.frontend.clone(), prefix);
        let head = || AttentionHead::new(config.query.clone(), config.frontend.output_dim());
        let asr = || Transducer::new(config.asr.clone());
        let (frontend, head, asr) = match system {
            System::AudioOnly => (None, None, Some(asr()?)),
            System::AvSingle => (Some(frontend(VISUAL_PREFIX)?), None, Some(asr()?)),
            System::Ss => (Some(frontend(attention::KEYS_PREFIX)?), Some(head()?), None),
            System::E2e => (Some(frontend(VISUAL_PREFIX)?), Some(head()?), Some(asr()?)),
            System::TwoStep => {
                return Err(Error::Config(
                    "two-step is assembled from an ss and an av-single checkpoint, it has no model of its own".into(),
                ))
            }
        };
        Ok(Self {
            system,
            config: config.clone(),
            frontend,
            head,
            asr,
        })
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let mut p = ParamStore::new();
        if let Some(f) = &self.frontend {
            f.init(&mut p, seed);
        }
        if let Some(h) = &self.head {
            h.init(&mut p, seed);
        }
        if let Some(a) = &self.asr {
            a.init(&mut p, seed);
        }
        p
    }

    fn need<'a, T>(part: &'a Option<T>, what: &str, system: System) -> Result<&'a T> {
        part.as_ref()
            .ok_or_else(|| Error::Config(format!("{system} model has no {what}")))
    }

    pub fn frontend(&self) -> Result<&VisualFrontend> {
        Self::need(&self.frontend, "visual frontend", self.system)
    }

    pub fn head(&self) -> Result<&AttentionHead> {
        Self::need(&self.head, "attention head", self.system)
    }

    pub fn asr(&self) -> Result<&Transducer> {
        Self::need(&self.asr, "transducer", self.system)
    }

    fn visual_node(&self, g: &mut Graph, params: &ParamStore, video: &SyncedVideo) -> Result<NodeId> {
        let x = g.input(video.to_tensor());
        self.frontend()?.forward(g, params, x)
    }

    /// Both streams through the encoder and the RNN-T loss.
    fn asr_loss(&self, g: &mut Graph, params: &ParamStore, audio: NodeId, visual: NodeId, target: &Transcript) -> Result<NodeId> {
        let asr = self.asr()?;
        let enc = asr.encode(g, params, audio, visual)?;
        asr.loss(g, params, enc, target)
    }

    /// Attention of one audio sequence over `tracks` looped to its length.
    fn attend_one(&self, g: &mut Graph, params: &ParamStore, audio: NodeId, tracks: &[NodeId]) -> Result<(Attended, NodeId)> {
        let head = self.head()?;
        let frames = g.shape(audio)[0];
        let q = head.query.forward(g, params, audio)?;
        let keys = g.loop_time_stack(tracks, frames)?;
        Ok((head.attend(g, params, &[q], keys)?, keys))
    }
}

/// Per-step training record.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Diagonal selection accuracy for the selector, mean attention entropy
    /// (nats) for e2e, unused otherwise.
    pub metric: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

fn stamp(ck: &mut Checkpoint, cfg: &RunConfig, system: System) {
    ck.meta.insert("system".into(), system.to_string());
    ck.meta.insert("model".into(), serde_json::to_string(&cfg.model).expect("model config serializes"));
    ck.meta.insert("config_digest".into(), cfg.digest());
    ck.meta.insert("seed".into(), cfg.seed.to_string());
}

fn train_loop<F>(
    cfg: &RunConfig,
    system: System,
    params: &mut ParamStore,
    save_to: Option<&Path>,
    mut step_loss: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&mut Graph, &ParamStore, u64) -> Result<(NodeId, f64)>,
{
    cfg.train.validate()?;
    let t = &cfg.train;
    let mut opt = OptimizerState::new(t.adam);
    let mut log = Vec::with_capacity(t.steps as usize);
    let checkpoint = |params: &ParamStore, opt: &OptimizerState| {
        let mut ck = Checkpoint::new(params.clone());
        ck.optimizer = Some(opt.clone());
        stamp(&mut ck, cfg, system);
        ck
    };
    for step in 0..t.steps {
        let mut g = Graph::new();
        let (loss, metric) = step_loss(&mut g, params, step)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{system} training loss at step {step}")));
        }
        let mut grads = g.backward(loss)?.param_grads(&g);
        let grad_norm = clip_global_norm(&mut grads, t.adam.clip_norm)?;
        // Step `s` of the schedule is the update that produces the s-th
        // parameter set, so the first update uses lr_at(1).
        let lr = t.schedule.lr_at(step + 1);
        adam_step(params, &grads, &mut opt, lr)?;
        let entry = StepLog {
            step,
            loss: value,
            lr,
            grad_norm,
            metric,
        };
        if t.log_every > 0 && (step % t.log_every == 0 || step + 1 == t.steps) {
            log::info!(
                "{system} step {step}: loss {value:.4} metric {metric:.4} lr {lr:.2e} |g| {grad_norm:.3}"
            );
        }
        log.push(entry);
        if let Some(path) = save_to {
            if t.save_every > 0 && (step + 1) % t.save_every == 0 {
                checkpoint(params, &opt).save(path)?;
            }
        }
    }
    let ck = checkpoint(params, &opt);
    if let Some(path) = save_to {
        ck.save(path)?;
    }
    Ok(TrainOutcome { checkpoint: ck, log })
}

fn rows(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let s = t.shape();
    let width: usize = s[1..].iter().product();
    let mut shape = s.to_vec();
    shape[0] = len;
    Tensor::new(&shape, t.data()[start * width..(start + len) * width].to_vec())
}

fn crop_video(v: &SyncedVideo, start: usize, len: usize) -> Result<SyncedVideo> {
    let n = v.height() * v.width() * crate::visual::CHANNELS;
    SyncedVideo::new(v.data()[start * n..(start + len) * n].to_vec(), len, v.height(), v.width())
}

/// Trains the selector with the matched-pair cross entropy: every batch
/// holds `B` utterances whose `B` videos compete for each audio stream, all
/// cropped to a common length at random offsets.
pub fn train_ss(cfg: &RunConfig, data: &TrainData, save_to: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(System::Ss, &cfg.model)?;
    let mut params = model.init(derive_seed(cfg.seed, "init", 0));
    train_loop(cfg, System::Ss, &mut params, save_to, |g, p, step| {
        let items = data.batch(cfg.seed, step, &cfg.train)?;
        let tmin = items
            .iter()
            .map(|it| it.features.shape()[0])
            .min()
            .expect("non-empty batch");
        let mut rng = stream(cfg.seed, "crop", step);
        let mut queries = Vec::with_capacity(items.len());
        let mut tracks = Vec::with_capacity(items.len());
        for it in &items {
            let u = &data.utts[it.utt];
            let off = rng.random_range(0..=it.features.shape()[0] - tmin);
            let a = g.input(rows(&it.features, off, tmin)?);
            queries.push(model.head()?.query.forward(g, p, a)?);
            let v = crop_video(&u.video, off, tmin)?;
            tracks.push(model.visual_node(g, p, &v)?);
        }
        let keys = g.stack(&tracks)?;
        let att = model.head()?.attend(g, p, &queries, keys)?;
        let loss = g.selection_ce(att.log_alpha)?;
        let scores = g.value(att.scores);
        let m = items.len();
        let correct = scores
            .data()
            .chunks(m)
            .enumerate()
            .filter(|(row, s)| attention::argmax(s) == row / tmin)
            .count();
        Ok((loss, correct as f64 / (m * tmin) as f64))
    })
}

/// Trains a single-track A/V transducer on matched pairs, or the audio-only
/// transducer (same stack, visual block all zeros) when `audio_only`.
pub fn train_av_asr(cfg: &RunConfig, data: &TrainData, audio_only: bool, save_to: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let system = if audio_only { System::AudioOnly } else { System::AvSingle };
    let model = Model::new(system, &cfg.model)?;
    let mut params = model.init(derive_seed(cfg.seed, "init", 0));
    let dv = cfg.model.asr.visual_dim;
    train_loop(cfg, system, &mut params, save_to, |g, p, step| {
        let items = data.batch(cfg.seed, step, &cfg.train)?;
        let mut total = None;
        for it in &items {
            let u = &data.utts[it.utt];
            let frames = it.features.shape()[0];
            let a = g.input(it.features.clone());
            let v = if audio_only {
                g.input(Tensor::zeros(&[frames, dv]))
            } else {
                model.visual_node(g, p, &u.video)?
            };
            let l = model.asr_loss(g, p, a, v, &u.transcript)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), 1.0 / items.len() as f64)?;
        Ok((loss, 0.0))
    })
}

/// Trains the end-to-end model: each audio stream attends over all `M = B`
/// videos of its batch and only the transcription loss is used. The batch
/// loader hands out utterance indices, never a target track.
pub fn train_e2e(cfg: &RunConfig, data: &TrainData, warm: Option<&Checkpoint>, save_to: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(System::E2e, &cfg.model)?;
    let mut params = model.init(derive_seed(cfg.seed, "init", 0));
    if let Some(donor) = warm {
        let prefix = format!("{VISUAL_PREFIX}/");
        let n = params.copy_prefix_from(&donor.params, &prefix, &prefix)?;
        log::info!("warm start: copied {n} visual frontend tensors");
    }
    train_loop(cfg, System::E2e, &mut params, save_to, |g, p, step| {
        let items = data.batch(cfg.seed, step, &cfg.train)?;
        let tracks = items
            .iter()
            .map(|it| model.visual_node(g, p, &data.utts[it.utt].video))
            .collect::<Result<Vec<_>>>()?;
        let mut total = None;
        let (mut entropy, mut frames) = (0.0, 0usize);
        for it in &items {
            let a = g.input(it.features.clone());
            let (att, keys) = model.attend_one(g, p, a, &tracks)?;
            let t = g.shape(a)[0];
            for row in g.value(att.alpha).data().chunks(tracks.len()) {
                entropy -= row.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            }
            frames += t;
            let vs = g.weighted_visual(att.alpha, keys)?;
            let d = g.shape(vs)[2];
            let v = g.reshape(vs, &[t, d])?;
            let l = model.asr_loss(g, p, a, v, &data.utts[it.utt].transcript)?;
            total = Some(match total {
                None => l,
                Some(x) => g.add(x, l)?,
            });
        }
        let loss = g.scale(total.expect("non-empty batch"), 1.0 / items.len() as f64)?;
        Ok((loss, entropy / frames as f64))
    })
}

/// A model with loaded parameters.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub params: ParamStore,
    /// Digest of the checkpoint bytes.
    pub checkpoint_digest: String,
    pub config_digest: String,
}

impl Trained {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing meta/{k}")))
        };
        let system: System = meta("system")?.parse()?;
        let config: ModelConfig =
            serde_json::from_str(meta("model")?).map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let model = Model::new(system, &config)?;
        let expected = model.init(0);
        for (name, t) in expected.iter() {
            match ck.params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: shape {:?}, model expects {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::MissingParam(name.clone())),
            }
        }
        Ok(Self {
            model,
            params: ck.params.clone(),
            checkpoint_digest: ck.digest(),
            config_digest: meta("config_digest")?.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn system(&self) -> System {
        self.model.system
    }

    /// Frontend features of one synced track, `[T_v, D]`.
    pub fn visual_features(&self, video: &SyncedVideo) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = self.model.visual_node(&mut g, &self.params, video)?;
        Ok(g.value(v).clone())
    }

    /// Attention scores `[1, T, M]` of `features` over per-track features.
    pub fn scores(&self, features: &Tensor, tracks: &[Tensor]) -> Result<Tensor> {
        if tracks.is_empty() {
            return Err(Error::Invalid("no face tracks".into()));
        }
        let mut g = Graph::new();
        let a = g.input(features.clone());
        let nodes: Vec<NodeId> = tracks.iter().map(|t| g.input(t.clone())).collect();
        let (att, _) = self.model.attend_one(&mut g, &self.params, a, &nodes)?;
        Ok(g.value(att.scores).clone())
    }

    /// Transcribes `features` with a `[T, D]` visual block, or zeros for the
    /// audio-only model.
    pub fn transcribe(&self, features: &Tensor, visual: Option<&Tensor>) -> Result<Transcript> {
        let asr = self.model.asr()?;
        let frames = features.shape()[0];
        let mut g = Graph::new();
        let a = g.input(features.clone());
        let v = match visual {
            Some(v) => g.input(v.clone()),
            None => g.input(Tensor::zeros(&[frames, self.model.config.asr.visual_dim])),
        };
        let enc = asr.encode(&mut g, &self.params, a, v)?;
        asr.greedy_decode(&self.params, g.value(enc), DEFAULT_MAX_SYMBOLS)
    }

    /// End-to-end inference with attention over `tracks` (frontend features).
    pub fn infer_e2e(&self, features: &Tensor, tracks: &[Tensor]) -> Result<E2eOutput> {
        if tracks.is_empty() {
            return Err(Error::Invalid("no face tracks".into()));
        }
        let mut g = Graph::new();
        let a = g.input(features.clone());
        let nodes: Vec<NodeId> = tracks.iter().map(|t| g.input(t.clone())).collect();
        let (att, keys) = self.model.attend_one(&mut g, &self.params, a, &nodes)?;
        let vs = g.weighted_visual(att.alpha, keys)?;
        let (t, d) = (features.shape()[0], g.shape(vs)[2]);
        let v = g.reshape(vs, &[t, d])?;
        let trace = attention::select_track(g.value(att.scores))?;
        let alpha = g.value(att.alpha).clone();
        let visual = g.value(v).clone();
        Ok(E2eOutput {
            transcript: self.transcribe(features, Some(&visual))?,
            trace,
            alpha,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct E2eOutput {
    pub transcript: Transcript,
    /// Per-frame argmax track.
    pub trace: Vec<usize>,
    /// `[1, T, M]` attention weights.
    pub alpha: Tensor,
}

/// Repeats the rows of a `[T_m, D]` track to `frames` rows.
pub fn loop_rows(t: &Tensor, frames: usize) -> Result<Tensor> {
    let (len, d) = (t.shape()[0], t.shape()[1]);
    if len == 0 {
        return Err(Error::Invalid("empty track".into()));
    }
    let mut data = Vec::with_capacity(frames * d);
    for f in 0..frames {
        let s = f % len;
        data.extend_from_slice(&t.data()[s * d..(s + 1) * d]);
    }
    Tensor::new(&[frames, d], data)
}

/// Visual block built from a per-frame hard choice among `tracks`.
pub fn select_rows(tracks: &[Tensor], choice: &[usize]) -> Result<Tensor> {
    let d = tracks
        .first()
        .ok_or_else(|| Error::Invalid("no face tracks".into()))?
        .shape()[1];
    let mut data = Vec::with_capacity(choice.len() * d);
    for (t, &m) in choice.iter().enumerate() {
        let tr = tracks
            .get(m)
            .ok_or_else(|| Error::Invalid(format!("selected track {m} of {}", tracks.len())))?;
        let s = t % tr.shape()[0];
        data.extend_from_slice(&tr.data()[s * d..(s + 1) * d]);
    }
    Tensor::new(&[choice.len(), d], data)
}

/// Selector output followed by the single-track A/V model, coupled only
/// through the hard per-frame choice. `oracle` replaces the selector's
/// choice with the given track at every frame.
pub fn infer_two_step(
    ss: Option<&Trained>,
    av: &Trained,
    features: &Tensor,
    ss_tracks: &[Tensor],
    av_tracks: &[Tensor],
    oracle: Option<usize>,
) -> Result<(Transcript, Vec<usize>)> {
    if av_tracks.is_empty() {
        return Err(Error::Invalid("no face tracks".into()));
    }
    let frames = features.shape()[0];
    let choice = match (oracle, ss) {
        (Some(gt), _) => vec![gt; frames],
        (None, Some(ss)) => attention::select_track(&ss.scores(features, ss_tracks)?)?,
        (None, None) => return Err(Error::Config("two-step inference needs a selector or the oracle".into())),
    };
    let visual = select_rows(av_tracks, &choice)?;
    Ok((av.transcribe(features, Some(&visual))?, choice))
}
