//! Synthetic talking-face corpus and evaluation-set augmentation.
//!
//! Each character is a short two-formant tone burst over a per-speaker pitch
//! buzz. The rendered face opens its mouth with the short-time audio
//! envelope and tints the mouth interior with a per-character viseme color.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::transducer::{char_token, Transcript};
use crate::visual::{VideoTrack, CHANNELS};

/// Words used for generated transcripts; together they cover every letter.
pub const WORDS: &[&str] = &[
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog", "pack", "my", "box", "with", "five", "dozen",
    "liquor", "jugs", "we", "can", "see", "it", "now", "zero", "ideas", "jazz", "very", "kind", "light", "wave",
    "yes", "good", "map", "hot", "sun", "query", "ox", "that's", "judge", "vex", "wiz", "fuzzy",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Per-character burst duration range, seconds.
    pub char_secs: (f64, f64),
    /// Silence between characters of a word, seconds.
    pub gap_secs: (f64, f64),
    /// Silence for a space, seconds.
    pub space_secs: (f64, f64),
    /// Leading and trailing silence range, seconds.
    pub edge_secs: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            height: 32,
            width: 32,
            min_words: 3,
            max_words: 5,
            char_secs: (0.04, 0.08),
            gap_secs: (0.0, 0.03),
            space_secs: (0.06, 0.15),
            edge_secs: (0.05, 0.25),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |(a, b): (f64, f64)| a > 0.0 && b >= a;
        if !(self.fps > 0.0)
            || self.height < 4
            || self.width < 4
            || self.min_words == 0
            || self.max_words < self.min_words
            || !ok_range(self.char_secs)
            || !ok_range(self.space_secs)
            || !(self.gap_secs.0 >= 0.0 && self.gap_secs.1 >= self.gap_secs.0)
            || !ok_range(self.edge_secs)
        {
            return Err(Error::Config(format!("invalid synthesis config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub seed: u64,
    pub waveform: Waveform,
    pub video: VideoTrack,
    pub transcript: Transcript,
    /// Mouth opening per video frame, in `[0, 1]`.
    pub aperture: Vec<f32>,
}

/// First and second formant of a character.
fn formants(token: usize) -> (f64, f64) {
    let f1 = 300.0 + 150.0 * (token % 4) as f64;
    let f2 = 950.0 + 230.0 * (token / 4) as f64;
    (f1, f2)
}

/// Mouth-interior color of a character, one value per channel.
pub fn viseme_color(token: usize) -> [f32; 3] {
    let level = |v: usize, n: usize| -0.9 + 1.8 * v as f32 / (n - 1) as f32;
    [level(token % 4, 4), level((token / 4) % 4, 4), level(token / 16, 2)]
}

/// Random transcript text drawn from [`WORDS`].
pub fn random_text(rng: &mut impl Rng, cfg: &SynthConfig) -> String {
    let n = rng.random_range(cfg.min_words..=cfg.max_words);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Short-time RMS centered on each of `frames` instants spaced `1 / fps`.
pub fn envelope(samples: &[f32], fps: f64, frames: usize, window_secs: f64) -> Vec<f64> {
    let half = ((window_secs * SAMPLE_RATE as f64) / 2.0).round() as isize;
    (0..frames)
        .map(|i| {
            let c = (i as f64 / fps * SAMPLE_RATE as f64).round() as isize;
            let lo = (c - half).max(0) as usize;
            let hi = ((c + half).max(0) as usize).min(samples.len());
            if hi <= lo {
                return 0.0;
            }
            let e: f64 = samples[lo..hi].iter().map(|&s| s as f64 * s as f64).sum();
            (e / (hi - lo) as f64).sqrt()
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Deterministic utterance for `(seed, text)`.
pub fn synth_utterance(id: &str, seed: u64, text: &str, cfg: &SynthConfig) -> Result<SynthUtterance> {
    cfg.validate()?;
    if text.is_empty() {
        return Err(Error::Invalid("empty utterance text".into()));
    }
    let transcript = Transcript::from_text(text)?;
    let mut rng = stream(seed, "utterance", 0);
    let sr = SAMPLE_RATE as f64;
    let speaker = rng.random_range(0.92..1.08);
    let pitch = rng.random_range(100.0..200.0);
    let lead = rng.random_range(cfg.edge_secs.0..=cfg.edge_secs.1);
    let trail = rng.random_range(cfg.edge_secs.0..=cfg.edge_secs.1);

    // (start sample, length, token) per voiced character.
    let mut bursts = Vec::new();
    let mut pos = (lead * sr) as usize;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c == ' ' {
            pos += (rng.random_range(cfg.space_secs.0..=cfg.space_secs.1) * sr) as usize;
            continue;
        }
        let len = (rng.random_range(cfg.char_secs.0..=cfg.char_secs.1) * sr) as usize;
        // Log-uniform loudness gives the envelope syllable-like modulation.
        let amp = 0.04 * 8f64.powf(rng.random::<f64>());
        bursts.push((pos, len, char_token(c).expect("validated above"), amp));
        pos += len + (rng.random_range(cfg.gap_secs.0..=cfg.gap_secs.1) * sr) as usize;
    }
    let total = pos + (trail * sr) as usize;
    let mut samples = vec![0.0f32; total];
    let tau = std::f64::consts::TAU;
    for &(start, len, tok, amp) in &bursts {
        let (f1, f2) = formants(tok);
        let (f1, f2) = (f1 * speaker, f2 * speaker);
        let ramp = (0.012 * sr) as usize;
        for i in 0..len {
            let edge = i.min(len - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let t = (start + i) as f64 / sr;
            let v = (tau * f1 * t).sin() + 0.6 * (tau * f2 * t).sin() + 0.25 * (tau * pitch * t).sin();
            samples[start + i] = (amp * env * v / 1.85) as f32;
        }
    }

    let frames = (total as f64 / sr * cfg.fps).ceil() as usize;
    let env = envelope(&samples, cfg.fps, frames, 1.0 / cfg.fps);
    let peak = env.iter().cloned().fold(0.0, f64::max).max(1e-9);
    let aperture: Vec<f32> = env.iter().map(|&e| (e / peak).min(1.0) as f32).collect();

    // Active character per video frame.
    let mut viseme = vec![None; frames];
    for &(start, len, tok, _) in &bursts {
        for (f, v) in viseme.iter_mut().enumerate() {
            let c = (f as f64 / cfg.fps * sr) as usize;
            if c >= start && c < start + len {
                *v = Some(tok);
            }
        }
    }
    let video = render_face(&mut rng, cfg, &aperture, &viseme)?;
    Ok(SynthUtterance {
        id: id.to_string(),
        seed,
        waveform: Waveform::new(samples)?,
        video,
        transcript,
        aperture,
    })
}

fn render_face(rng: &mut impl Rng, cfg: &SynthConfig, aperture: &[f32], viseme: &[Option<usize>]) -> Result<VideoTrack> {
    let (h, w) = (cfg.height, cfg.width);
    let skin = [
        rng.random_range(0.2f32..0.7),
        rng.random_range(-0.1f32..0.3),
        rng.random_range(-0.4f32..0.0),
    ];
    let lips = [skin[0] - 0.4, skin[1] - 0.4, skin[2] - 0.2];
    // Mouth box: centered horizontally in the lower half.
    let (mx0, mx1) = (w / 4, w - w / 4);
    let my_center = h as f32 * 0.72;
    let max_open = h as f32 * 0.22;
    let mut frames = Vec::with_capacity(aperture.len() * h * w * CHANNELS);
    for (a, v) in aperture.iter().zip(viseme) {
        let open = a * max_open;
        let inner = match v {
            Some(tok) => viseme_color(*tok),
            None => [-0.95, -0.95, -0.95],
        };
        for y in 0..h {
            // Fraction of this pixel row covered by the open mouth.
            let (top, bottom) = (my_center - open / 2.0, my_center + open / 2.0);
            let cover = ((y as f32 + 1.0).min(bottom) - (y as f32).max(top)).clamp(0.0, 1.0);
            let lip_row = (y as f32 + 0.5 - my_center).abs() < open / 2.0 + 1.0;
            for x in 0..w {
                let in_mouth = x >= mx0 && x < mx1;
                for ch in 0..CHANNELS {
                    let base = if in_mouth && lip_row { lips[ch] } else { skin[ch] };
                    let px = if in_mouth {
                        base * (1.0 - cover) + inner[ch] * cover
                    } else {
                        base
                    };
                    let noise = rng.random_range(-0.02f32..0.02);
                    frames.push((px + noise).clamp(-1.0, 1.0));
                }
            }
        }
    }
    VideoTrack::new(frames, aperture.len(), h, w, cfg.fps)
}

/// `count` utterances with ids `utt00000..` and per-item seeds derived from
/// `master_seed`.
pub fn generate(master_seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    (0..count)
        .map(|i| {
            let seed = derive_seed(master_seed, "corpus", i as u64);
            let mut rng = stream(seed, "text", 0);
            let text = random_text(&mut rng, cfg);
            synth_utterance(&format!("utt{i:05}"), seed, &text, cfg)
        })
        .collect()
}

/// Repeats or crops `noise` to exactly `n` samples.
fn fit_length(noise: &[f32], n: usize) -> Vec<f32> {
    noise.iter().cycle().take(n).copied().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mix {
    pub waveform: Waveform,
    pub gain: f64,
    /// Samples clipped to `[-1, 1]`.
    pub clipped: usize,
}

/// Adds `noise` scaled to `snr_db` below `signal`, measured as mean-square
/// power over the utterance.
pub fn mix_noise(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mix> {
    if noise.is_empty() {
        return Err(Error::Invalid("empty noise".into()));
    }
    let n = fit_length(noise.samples(), signal.len());
    let ps = signal.power();
    let pn = n.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / n.len().max(1) as f64;
    if ps <= 0.0 || pn <= 0.0 {
        return Err(Error::Invalid(format!("zero-power input (signal {ps}, noise {pn})")));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut clipped = 0;
    let out = signal
        .samples()
        .iter()
        .zip(&n)
        .map(|(&s, &v)| {
            let y = s as f64 + gain * v as f64;
            if y.abs() > 1.0 {
                clipped += 1;
            }
            y.clamp(-1.0, 1.0) as f32
        })
        .collect();
    if clipped > 0 {
        log::warn!(
            "mix_noise clipped {clipped} of {} samples ({:.3}%)",
            signal.len(),
            100.0 * clipped as f64 / signal.len() as f64
        );
    }
    Ok(Mix {
        waveform: Waveform::new(out)?,
        gain,
        clipped,
    })
}

pub const BABBLE_TALKERS: usize = 8;

/// Eight synthetic talkers at random offsets, normalized to peak 0.5.
pub fn synth_babble(seed: u64, samples: usize, cfg: &SynthConfig) -> Result<Waveform> {
    if samples == 0 {
        return Err(Error::Invalid("babble duration must be positive".into()));
    }
    let mut acc = vec![0.0f64; samples];
    for k in 0..BABBLE_TALKERS {
        let s = derive_seed(seed, "babble", k as u64);
        let mut rng = stream(s, "text", 0);
        let text = random_text(&mut rng, cfg);
        let u = synth_utterance("babble", s, &text, cfg)?;
        let src = u.waveform.samples();
        let offset = rng.random_range(0..src.len());
        for (i, a) in acc.iter_mut().enumerate() {
            *a += src[(offset + i) % src.len()] as f64;
        }
    }
    let peak = acc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    Waveform::new(acc.iter().map(|v| (v * scale) as f32).collect())
}

/// Minimum utterance length for overlap augmentation, in samples (four
/// acoustic frames).
pub const MIN_OVERLAP_SAMPLES: usize = 4 * crate::acoustic::FRAME_SAMPLES;

/// Adds the tail of `prefix` over the first quarter of `u` and the head of
/// `suffix` over the last quarter, each scaled to `u`'s power.
pub fn add_overlap(u: &SynthUtterance, prefix: &SynthUtterance, suffix: &SynthUtterance) -> Result<Waveform> {
    if u.id == prefix.id || u.id == suffix.id {
        return Err(Error::Invalid(format!("overlap source shares id {}", u.id)));
    }
    overlap_waveforms(&u.waveform, &prefix.waveform, &suffix.waveform)
}

/// [`add_overlap`] on bare waveforms; the caller guarantees distinct talkers.
pub fn overlap_waveforms(u: &Waveform, prefix: &Waveform, suffix: &Waveform) -> Result<Waveform> {
    let n = u.len();
    if n < MIN_OVERLAP_SAMPLES {
        return Err(Error::TooShort {
            samples: n,
            min: MIN_OVERLAP_SAMPLES,
        });
    }
    let region = n / 4;
    let ps = u.power();
    let mut out: Vec<f32> = u.samples().to_vec();
    for (other, at_start) in [(prefix, true), (suffix, false)] {
        let po = other.power();
        if ps <= 0.0 || po <= 0.0 {
            return Err(Error::Invalid("zero-power overlap input".into()));
        }
        let gain = (ps / po).sqrt();
        let src = other.samples();
        let piece: Vec<f32> = if at_start {
            // Tail of the previous talker, cycled if it is shorter.
            let start = src.len() as isize - region as isize;
            (0..region)
                .map(|i| src[(start + i as isize).rem_euclid(src.len() as isize) as usize])
                .collect()
        } else {
            fit_length(src, region)
        };
        let base = if at_start { 0 } else { n - region };
        for (o, p) in out[base..base + region].iter_mut().zip(&piece) {
            *o = (*o as f64 + gain * *p as f64).clamp(-1.0, 1.0) as f32;
        }
    }
    Waveform::new(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Noise {
    #[serde(rename = "clean")]
    Clean,
    #[serde(rename = "snr20")]
    Snr20,
    #[serde(rename = "snr10")]
    Snr10,
    #[serde(rename = "snr0")]
    Snr0,
    #[serde(rename = "overlap")]
    Overlap,
}

impl Noise {
    pub const ALL: [Noise; 5] = [Noise::Clean, Noise::Snr20, Noise::Snr10, Noise::Snr0, Noise::Overlap];

    pub fn snr_db(self) -> Option<f64> {
        match self {
            Noise::Snr20 => Some(20.0),
            Noise::Snr10 => Some(10.0),
            Noise::Snr0 => Some(0.0),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Noise::Clean => "clean",
            Noise::Snr20 => "snr20",
            Noise::Snr10 => "snr10",
            Noise::Snr0 => "snr0",
            Noise::Overlap => "overlap",
        }
    }
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Noise::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise condition {s:?} (clean|snr20|snr10|snr0|overlap)")))
    }
}

pub const TRACK_COUNTS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub noise: Noise,
    pub tracks: usize,
    pub seed: u64,
}

impl ConditionSpec {
    pub fn new(noise: Noise, tracks: usize, seed: u64) -> Result<Self> {
        if !TRACK_COUNTS.contains(&tracks) {
            return Err(Error::Config(format!("track count must be one of {TRACK_COUNTS:?}, got {tracks}")));
        }
        Ok(Self { noise, tracks, seed })
    }

    pub fn tag(&self) -> String {
        format!("{}-n{}", self.noise, self.tracks)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTrackExample {
    pub id: String,
    pub audio: Waveform,
    /// Ground truth first.
    pub tracks: Vec<VideoTrack>,
    pub transcript: Transcript,
    pub ground_truth: usize,
}

/// Largest supported track count.
pub const MAX_TRACKS: usize = 8;

/// Distractor utterance indices for base utterance `i` of `len`, in draw
/// order. Track sets for smaller `N` are prefixes of this list, so a
/// condition with more tracks only ever adds competitors.
pub fn distractor_order(len: usize, i: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, "multitrack", i as u64);
    let amount = (MAX_TRACKS - 1).min(len.saturating_sub(1));
    index::sample(&mut rng, len - 1, amount)
        .into_iter()
        .map(|j| if j >= i { j + 1 } else { j })
        .collect()
}

/// Picks `n - 1` distractors per base utterance without replacement and
/// loops them to the base video's length.
pub fn build_multitrack(base: &[SynthUtterance], n: usize, seed: u64) -> Result<Vec<MultiTrackExample>> {
    if !(1..=MAX_TRACKS).contains(&n) {
        return Err(Error::Invalid(format!("track count must be in 1..={MAX_TRACKS}, got {n}")));
    }
    if base.len() < n {
        return Err(Error::Invalid(format!("{} base utterances cannot supply {n} tracks", base.len())));
    }
    base.iter()
        .enumerate()
        .map(|(i, u)| {
            let mut tracks = vec![u.video.clone()];
            for &j in distractor_order(base.len(), i, seed).iter().take(n - 1) {
                tracks.push(base[j].video.looped_to(u.video.num_frames())?);
            }
            Ok(MultiTrackExample {
                id: u.id.clone(),
                audio: u.waveform.clone(),
                tracks,
                transcript: u.transcript.clone(),
                ground_truth: 0,
            })
        })
        .collect()
}

impl AsRef<Waveform> for SynthUtterance {
    fn as_ref(&self) -> &Waveform {
        &self.waveform
    }
}

/// Audio of base utterance `i` under `noise`. Babble and overlap partners
/// depend only on `(seed, i)`, so every SNR sees the same noise sample.
pub fn augment_waveform<W: AsRef<Waveform>>(base: &[W], i: usize, noise: Noise, seed: u64, cfg: &SynthConfig) -> Result<Waveform> {
    let u = base
        .get(i)
        .ok_or_else(|| Error::Invalid(format!("utterance {i} of {}", base.len())))?
        .as_ref();
    match noise {
        Noise::Clean => Ok(u.clone()),
        Noise::Overlap => {
            if base.len() < 3 {
                return Err(Error::Invalid("overlap needs at least 3 base utterances".into()));
            }
            let mut rng = stream(seed, "overlap", i as u64);
            let pick = index::sample(&mut rng, base.len() - 1, 2);
            let other = |j: usize| base[if j >= i { j + 1 } else { j }].as_ref();
            overlap_waveforms(u, other(pick.index(0)), other(pick.index(1)))
        }
        _ => {
            let snr = noise.snr_db().expect("snr condition");
            let babble = synth_babble(derive_seed(seed, "eval-babble", i as u64), u.len(), cfg)?;
            Ok(mix_noise(u, &babble, snr)?.waveform)
        }
    }
}

/// Applies a noise condition to every example's audio; `examples[i]` must
/// come from `base[i]`.
pub fn augment_audio(
    examples: &mut [MultiTrackExample],
    base: &[SynthUtterance],
    noise: Noise,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<()> {
    for (i, ex) in examples.iter_mut().enumerate() {
        if base.get(i).map(|b| &b.id) != Some(&ex.id) {
            return Err(Error::Data(format!("example {} does not match base utterance {i}", ex.id)));
        }
        ex.audio = augment_waveform(base, i, noise, seed, cfg)?;
    }
    Ok(())
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub audio_path: PathBuf,
    pub video_paths: Vec<PathBuf>,
    pub transcript: String,
    pub ground_truth_index: usize,
    pub condition: String,
    pub seed: u64,
    /// Fields this version does not know about, kept for round trips.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Resolves a manifest path relative to the manifest's directory.
pub fn resolve(manifest: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            height: 8,
            width: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn words_cover_the_alphabet() {
        for c in 'a'..='z' {
            assert!(WORDS.iter().any(|w| w.contains(c)), "{c}");
        }
        let colors: std::collections::BTreeSet<[i32; 3]> = (1..29)
            .map(|t| viseme_color(t).map(|v| (v * 100.0).round() as i32))
            .collect();
        assert_eq!(colors.len(), 28);
    }

    #[test]
    fn utterance_is_deterministic() {
        let a = synth_utterance("a", 5, "the fox", &small()).unwrap();
        let b = synth_utterance("a", 5, "the fox", &small()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.waveform, synth_utterance("a", 6, "the fox", &small()).unwrap().waveform);
        assert!(synth_utterance("a", 5, "", &small()).is_err());
        assert!(synth_utterance("a", 5, "fox7", &small()).is_err());
        assert_eq!(a.video.num_frames(), a.aperture.len());
        assert!((a.video.duration_secs() - a.waveform.duration_secs()).abs() <= 1.0 / 25.0);
    }

    #[test]
    fn snr_examples() {
        let u = synth_utterance("a", 1, "jazz hot", &small()).unwrap();
        let noise = synth_babble(2, u.waveform.len(), &small()).unwrap();
        let mut gains = Vec::new();
        for snr in [0.0, 10.0, 20.0] {
            let m = mix_noise(&u.waveform, &noise, snr).unwrap();
            let pn = noise.power() * m.gain * m.gain;
            assert!((u.waveform.power() / pn - 10f64.powf(snr / 10.0)).abs() / 10f64.powf(snr / 10.0) < 1e-6);
            gains.push(m.gain);
        }
        assert!(gains[0] > gains[1] && gains[1] > gains[2]);
        let silent = Waveform::new(vec![0.0; 100]).unwrap();
        assert!(mix_noise(&u.waveform, &silent, 0.0).is_err());
    }

    #[test]
    fn babble_length_and_determinism() {
        let a = synth_babble(7, 12_345, &small()).unwrap();
        assert_eq!(a.len(), 12_345);
        assert_eq!(a, synth_babble(7, 12_345, &small()).unwrap());
        let peak = a.samples().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-6);
    }

    #[test]
    fn overlap_regions() {
        let cfg = small();
        let u = synth_utterance("u", 1, "pack my box", &cfg).unwrap();
        let p = synth_utterance("p", 2, "quick dog", &cfg).unwrap();
        let s = synth_utterance("s", 3, "lazy", &cfg).unwrap();
        let o = add_overlap(&u, &p, &s).unwrap();
        let n = u.waveform.len();
        assert_eq!(o.len(), n);
        assert_eq!(&o.samples()[n / 4..n - n / 4], &u.waveform.samples()[n / 4..n - n / 4]);
        assert!(add_overlap(&u, &u, &s).is_err());
    }

    #[test]
    fn multitrack_contract() {
        let base = generate(3, 6, &small()).unwrap();
        let one = build_multitrack(&base, 1, 9).unwrap();
        assert!(one.iter().all(|e| e.tracks.len() == 1));
        let four = build_multitrack(&base, 4, 9).unwrap();
        for (e, u) in four.iter().zip(&base) {
            assert_eq!(e.tracks.len(), 4);
            assert_eq!(e.tracks[0], u.video);
            assert!(e.tracks.iter().all(|t| t.num_frames() == u.video.num_frames()));
            // A distractor's first frame never equals the ground truth's
            // (different skin tone).
            assert!(e.tracks[1..].iter().all(|t| t.frame(0) != u.video.frame(0)));
        }
        assert_eq!(four, build_multitrack(&base, 4, 9).unwrap());
        assert!(build_multitrack(&base, 7, 9).is_err());
        let two = build_multitrack(&base, 2, 9).unwrap();
        assert!(two.iter().zip(&four).all(|(a, b)| a.tracks[..] == b.tracks[..2]));
        assert!(build_multitrack(&base, 0, 9).is_err());
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut extra = BTreeMap::new();
        extra.insert("speaker".to_string(), serde_json::json!("s1"));
        let rec = ManifestRecord {
            id: "utt00001".into(),
            audio_path: "audio/utt00001.wav".into(),
            video_paths: vec!["video/utt00001.avtv".into(), "video/utt00002.avtv".into()],
            transcript: "the fox".into(),
            ground_truth_index: 0,
            condition: "clean-n2".into(),
            seed: 42,
            extra,
        };
        write_manifest(&p, std::slice::from_ref(&rec)).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), vec![rec]);

        std::fs::write(&p, "{\"id\":\"a\",\"audio_path\":\"x.wav\",\"video_paths\":[],\"transcript\":\"a\",\"ground_truth_index\":0,\"condition\":\"clean\",\"seed\":1}\n{\"id\":\"b\"}\n").unwrap();
        let err = read_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("audio_path"), "{err}");
    }

    #[test]
    fn condition_parsing() {
        assert_eq!("snr10".parse::<Noise>().unwrap(), Noise::Snr10);
        assert!("snr5".parse::<Noise>().is_err());
        assert!(ConditionSpec::new(Noise::Clean, 3, 0).is_err());
        assert_eq!(ConditionSpec::new(Noise::Snr0, 2, 0).unwrap().tag(), "snr0-n2");
    }
}
