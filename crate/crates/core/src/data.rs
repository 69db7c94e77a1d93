//! Model-ready utterances, training batches and evaluation sets.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::acoustic::{self, Waveform, FEATURE_DIM};
use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::corpus::{self, ConditionSpec, ManifestRecord, Noise, SynthConfig, SynthUtterance};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::transducer::Transcript;
use crate::visual::{self, SyncedVideo};

/// Stacked log-mel features as a `[T, 240]` tensor.
pub fn feature_tensor(w: &Waveform) -> Result<Tensor> {
    let f = acoustic::extract(w)?;
    Tensor::from_f32(&[f.num_frames(), FEATURE_DIM], f.data())
}

/// One matched audio/video pair with its own video synced to the audio.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    pub features: Tensor,
    pub video: SyncedVideo,
    pub transcript: Transcript,
}

impl Utterance {
    pub fn from_synth(u: &SynthUtterance) -> Result<Self> {
        let features = feature_tensor(&u.waveform)?;
        let video = visual::sync_to_acoustic(&u.video, features.shape()[0])?;
        Ok(Self {
            id: u.id.clone(),
            waveform: u.waveform.clone(),
            features,
            video,
            transcript: u.transcript.clone(),
        })
    }

    /// Loads the audio and the first listed video of a manifest record.
    pub fn load(manifest: &Path, rec: &ManifestRecord) -> Result<Self> {
        let waveform = Waveform::read_wav(&corpus::resolve(manifest, &rec.audio_path))?;
        let first = rec
            .video_paths
            .first()
            .ok_or_else(|| Error::Data(format!("{}: record {} lists no video", manifest.display(), rec.id)))?;
        let video = SyncedVideo::read(&corpus::resolve(manifest, first))?;
        let features = feature_tensor(&waveform)?;
        Ok(Self {
            id: rec.id.clone(),
            waveform,
            features,
            video,
            transcript: Transcript::from_text(&rec.transcript)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

impl AsRef<Waveform> for Utterance {
    fn as_ref(&self) -> &Waveform {
        &self.waveform
    }
}

pub fn prepare(base: &[SynthUtterance]) -> Result<Vec<Utterance>> {
    base.iter().map(Utterance::from_synth).collect()
}

const BABBLE_POOL: usize = 16;
const BABBLE_SECS: f64 = 5.0;

/// Training utterances plus a pool of babble for noise augmentation.
pub struct TrainData {
    pub utts: Vec<Utterance>,
    babble: Vec<Waveform>,
}

/// One element of a training batch.
pub struct BatchItem {
    pub utt: usize,
    /// Features of the (possibly noise-augmented) audio.
    pub features: Tensor,
}

impl TrainData {
    pub fn new(utts: Vec<Utterance>, seed: u64, synth: &SynthConfig) -> Result<Self> {
        let samples = (BABBLE_SECS * acoustic::SAMPLE_RATE as f64) as usize;
        let babble = (0..BABBLE_POOL)
            .map(|k| corpus::synth_babble(derive_seed(seed, "train-babble", k as u64), samples, synth))
            .collect::<Result<_>>()?;
        Ok(Self { utts, babble })
    }

    /// Distinct utterances for `step`, each mixed with babble with
    /// probability `cfg.noise_prob`. Depends only on `(seed, step)`.
    pub fn batch(&self, seed: u64, step: u64, cfg: &TrainConfig) -> Result<Vec<BatchItem>> {
        if self.utts.len() < cfg.batch {
            return Err(Error::Data(format!(
                "batch of {} needs at least that many utterances, have {}",
                cfg.batch,
                self.utts.len()
            )));
        }
        let mut rng = stream(seed, "batch", step);
        index::sample(&mut rng, self.utts.len(), cfg.batch)
            .into_iter()
            .map(|i| {
                let u = &self.utts[i];
                let features = if cfg.noise_prob > 0.0 && rng.random::<f64>() < cfg.noise_prob {
                    let noise = &self.babble[rng.random_range(0..self.babble.len())];
                    let off = rng.random_range(0..noise.len());
                    let piece: Vec<f32> = noise.samples().iter().cycle().skip(off).take(u.waveform.len()).copied().collect();
                    let snr = rng.random_range(cfg.snr_db.0..=cfg.snr_db.1);
                    let mixed = corpus::mix_noise(&u.waveform, &Waveform::new(piece)?, snr)?;
                    feature_tensor(&mixed.waveform)?
                } else {
                    u.features.clone()
                };
                Ok(BatchItem { utt: i, features })
            })
            .collect()
    }
}

/// One scored example: audio features and the utterances whose faces are on
/// screen, in presentation order.
#[derive(Clone, Debug)]
pub struct EvalExample {
    pub utt: usize,
    pub features: Tensor,
    pub tracks: Vec<usize>,
    /// Position of the true speaker in `tracks`.
    pub ground_truth: usize,
}

/// Held-out utterances with fixed distractor orders and cached augmented
/// audio.
pub struct EvalSet {
    pub utts: Vec<Utterance>,
    pub seed: u64,
    synth: SynthConfig,
    distractors: Vec<Vec<usize>>,
    audio: RefCell<HashMap<(usize, Noise), Tensor>>,
}

impl EvalSet {
    pub fn new(utts: Vec<Utterance>, seed: u64, synth: &SynthConfig) -> Result<Self> {
        if utts.len() < corpus::MAX_TRACKS {
            return Err(Error::Data(format!(
                "evaluation needs at least {} utterances, have {}",
                corpus::MAX_TRACKS,
                utts.len()
            )));
        }
        let distractors = (0..utts.len())
            .map(|i| corpus::distractor_order(utts.len(), i, seed))
            .collect();
        Ok(Self {
            utts,
            seed,
            synth: synth.clone(),
            distractors,
            audio: RefCell::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.utts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utts.is_empty()
    }

    pub fn features(&self, i: usize, noise: Noise) -> Result<Tensor> {
        if let Some(t) = self.audio.borrow().get(&(i, noise)) {
            return Ok(t.clone());
        }
        let w = corpus::augment_waveform(&self.utts, i, noise, self.seed, &self.synth)?;
        let t = feature_tensor(&w)?;
        self.audio.borrow_mut().insert((i, noise), t.clone());
        Ok(t)
    }

    /// Example `i` under `cond`, with tracks shuffled by a seeded
    /// permutation so no system can profit from the track position.
    pub fn example(&self, i: usize, cond: &ConditionSpec) -> Result<EvalExample> {
        let n = cond.tracks;
        let mut tracks = vec![i];
        tracks.extend(self.distractors[i].iter().take(n - 1));
        let mut rng = stream(cond.seed, &format!("present-n{n}"), i as u64);
        tracks.shuffle(&mut rng);
        let ground_truth = tracks.iter().position(|&t| t == i).expect("true track present");
        Ok(EvalExample {
            utt: i,
            features: self.features(i, cond.noise)?,
            tracks,
            ground_truth,
        })
    }
}
