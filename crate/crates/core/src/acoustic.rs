//! 16 kHz waveform to stacked log-mel features.
//!
//! 25 ms Hann windows every 10 ms, 512-point power spectrum, 80 mel bands
//! between 125 Hz and 7.5 kHz, natural log with an energy floor, then three
//! consecutive frames folded into one 240-dimensional vector every 30 ms.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::binio;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_LEN: usize = 400;
pub const HOP_LEN: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const NUM_MEL: usize = 80;
pub const MEL_LOW_HZ: f64 = 125.0;
pub const MEL_HIGH_HZ: f64 = 7_500.0;
pub const ENERGY_FLOOR: f64 = 1e-10;
pub const STACK: usize = 3;
pub const FEATURE_DIM: usize = NUM_MEL * STACK;
/// Samples per stacked feature frame (30 ms).
pub const FRAME_SAMPLES: usize = HOP_LEN * STACK;
/// Seconds between stacked feature frames.
pub const FRAME_HOP_SECS: f64 = FRAME_SAMPLES as f64 / SAMPLE_RATE as f64;

const FEATURE_MAGIC: &[u8; 4] = b"AVTF";

/// Mono 16 kHz audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Mean square over the whole signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / self.samples.len() as f64
    }

    /// Writes single-channel 16-bit PCM.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut r = hound::WavReader::open(path)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE || spec.bits_per_sample != 16 {
            return Err(Error::Data(format!(
                "{}: expected mono 16-bit 16 kHz PCM, got {} ch / {} bit / {} Hz",
                path.display(),
                spec.channels,
                spec.bits_per_sample,
                spec.sample_rate
            )));
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32767.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples)
    }
}

/// Stacked log-mel features, `T x 240`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticFeatures {
    data: Vec<f32>,
    frames: usize,
}

impl AcousticFeatures {
    pub fn new(data: Vec<f32>, frames: usize) -> Result<Self> {
        if data.len() != frames * FEATURE_DIM {
            return Err(Error::shape(
                "acoustic_features",
                format!("{} values for {frames} frames of {FEATURE_DIM}", data.len()),
            ));
        }
        Ok(Self { data, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        FEATURE_DIM
    }

    pub fn frame_rate() -> f64 {
        1.0 / FRAME_HOP_SECS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        binio::encode_array(FEATURE_MAGIC, &[self.frames, FEATURE_DIM], &self.data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (dims, data) = binio::read_array(path, FEATURE_MAGIC)?;
        if dims.len() != 2 || dims[1] != FEATURE_DIM {
            return Err(Error::Data(format!("{}: feature dims {dims:?}", path.display())));
        }
        Self::new(data, dims[0])
    }
}

struct MelTables {
    window: Vec<f64>,
    /// Per filter: first FFT bin and the weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

fn mel_edges() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
    (0..NUM_MEL + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (NUM_MEL + 1) as f64)
        .collect()
}

/// Center frequency of each mel filter, in Hz.
pub fn mel_center_frequencies() -> Vec<f64> {
    mel_edges()[1..=NUM_MEL].iter().map(|&m| mel_to_hz(m)).collect()
}

fn tables() -> &'static MelTables {
    static TABLES: OnceLock<MelTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        // Periodic Hann.
        let window = (0..WINDOW_LEN)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_LEN as f64).cos())
            .collect();
        let edges = mel_edges();
        let bins = FFT_SIZE / 2 + 1;
        let bin_mel: Vec<f64> = (0..bins)
            .map(|k| hz_to_mel(k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64))
            .collect();
        let filters = (0..NUM_MEL)
            .map(|i| {
                let (lo, c, hi) = (edges[i], edges[i + 1], edges[i + 2]);
                let w: Vec<f64> = bin_mel
                    .iter()
                    .map(|&m| ((m - lo) / (c - lo)).min((hi - m) / (hi - c)).max(0.0))
                    .collect();
                let first = w.iter().position(|&v| v > 0.0).unwrap_or(bins);
                let last = w.iter().rposition(|&v| v > 0.0).map_or(first, |l| l + 1);
                (first, w[first..last.max(first)].to_vec())
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        MelTables { window, filters, fft }
    })
}

/// Hann-weighted 400-sample windows at a 160-sample hop.
pub fn frame_windows(w: &Waveform) -> Result<Vec<Vec<f64>>> {
    let n = w.len();
    if n < WINDOW_LEN {
        return Err(Error::TooShort {
            samples: n,
            min: WINDOW_LEN,
        });
    }
    let count = (n - WINDOW_LEN) / HOP_LEN + 1;
    let win = &tables().window;
    Ok((0..count)
        .map(|i| {
            w.samples()[i * HOP_LEN..i * HOP_LEN + WINDOW_LEN]
                .iter()
                .zip(win)
                .map(|(&s, &h)| s as f64 * h)
                .collect()
        })
        .collect())
}

/// Floored natural-log mel energies, one 80-vector per window.
pub fn log_mel(windows: &[Vec<f64>]) -> Vec<[f64; NUM_MEL]> {
    let t = tables();
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut power = vec![0.0; FFT_SIZE / 2 + 1];
    windows
        .iter()
        .map(|win| {
            for (b, v) in buf.iter_mut().zip(win.iter().chain(std::iter::repeat(&0.0))) {
                *b = Complex::new(*v, 0.0);
            }
            t.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let mut out = [0.0; NUM_MEL];
            for (o, (first, w)) in out.iter_mut().zip(&t.filters) {
                let e: f64 = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
                *o = e.max(ENERGY_FLOOR).ln();
            }
            out
        })
        .collect()
}

/// Folds non-overlapping triples of 80-d frames into 240-d frames, dropping
/// any remainder.
pub fn stack3(feats: &[[f64; NUM_MEL]]) -> Result<AcousticFeatures> {
    if feats.len() < STACK {
        return Err(Error::TooShort {
            samples: feats.len(),
            min: STACK,
        });
    }
    let frames = feats.len() / STACK;
    let mut data = Vec::with_capacity(frames * FEATURE_DIM);
    for f in feats.iter().take(frames * STACK) {
        data.extend(f.iter().map(|&v| v as f32));
    }
    AcousticFeatures::new(data, frames)
}

/// Full pipeline: windows, log-mel, stacking.
pub fn extract(w: &Waveform) -> Result<AcousticFeatures> {
    let windows = frame_windows(w)?;
    stack3(&log_mel(&windows))
}

/// Number of stacked frames `extract` produces for `samples` input samples.
pub fn num_frames_for(samples: usize) -> usize {
    if samples < WINDOW_LEN {
        0
    } else {
        ((samples - WINDOW_LEN) / HOP_LEN + 1) / STACK
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, amp: f32) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin() as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(frame_windows(&Waveform::new(vec![0.0; 400]).unwrap()).unwrap().len(), 1);
        assert_eq!(frame_windows(&Waveform::new(vec![0.0; 16000]).unwrap()).unwrap().len(), 98);
        let err = frame_windows(&Waveform::new(vec![0.0; 399]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("too short"));
    }

    #[test]
    fn silent_window_hits_floor() {
        let lm = log_mel(&[vec![0.0; WINDOW_LEN]]);
        assert!(lm[0].iter().all(|&v| v == ENERGY_FLOOR.ln()));
    }

    #[test]
    fn sine_peaks_at_nearest_filter() {
        let centers = mel_center_frequencies();
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let d = |f: f64| (hz_to_mel(f) - hz_to_mel(1000.0)).abs();
                d(*a.1).total_cmp(&d(*b.1))
            })
            .unwrap()
            .0;
        let lm = log_mel(&frame_windows(&sine(1000.0, 4000, 0.5)).unwrap());
        for frame in &lm {
            let arg = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn scaling_shifts_log_energy() {
        let a = sine(440.0, 2000, 0.05);
        let b = Waveform::new(a.samples().iter().map(|s| s * 10.0).collect()).unwrap();
        let la = log_mel(&frame_windows(&a).unwrap());
        let lb = log_mel(&frame_windows(&b).unwrap());
        let shift = 2.0 * 10f64.ln();
        for (fa, fb) in la.iter().zip(&lb) {
            let peak = fa.iter().cloned().fold(f64::MIN, f64::max);
            for (x, y) in fa.iter().zip(fb).filter(|(x, _)| **x > ENERGY_FLOOR.ln()) {
                // Far sidelobe bins sit near f32 rounding noise of the samples.
                let tol = if *x > peak - 10.0 { 1e-4 } else { 1e-2 };
                assert!((y - x - shift).abs() < tol, "{x} {y}");
            }
        }
    }

    #[test]
    fn stacking_shapes() {
        let f = |n: usize| (0..n).map(|i| [i as f64; NUM_MEL]).collect::<Vec<_>>();
        let s = stack3(&f(3)).unwrap();
        assert_eq!(s.num_frames(), 1);
        assert_eq!(s.frame(0)[0], 0.0);
        assert_eq!(s.frame(0)[80], 1.0);
        assert_eq!(s.frame(0)[160], 2.0);
        assert_eq!(stack3(&f(98)).unwrap().num_frames(), 32);
        assert!(stack3(&f(2)).is_err());
    }

    #[test]
    fn one_second_gives_32_frames() {
        let f = extract(&sine(300.0, 16000, 0.3)).unwrap();
        assert_eq!(f.num_frames(), 32);
        assert_eq!(f.dim(), 240);
        assert!((AcousticFeatures::frame_rate() - 33.333).abs() < 1e-2);
        assert_eq!(num_frames_for(16000), 32);
    }

    #[test]
    fn three_hop_shift_moves_one_frame() {
        let base = sine(700.0, 8000, 0.2);
        let mut shifted = vec![0.1f32; FRAME_SAMPLES];
        shifted.extend_from_slice(base.samples());
        let a = extract(&base).unwrap();
        let b = extract(&Waveform::new(shifted).unwrap()).unwrap();
        for t in 0..a.num_frames() - 1 {
            assert_eq!(a.frame(t), b.frame(t + 1));
        }
    }

    #[test]
    fn wav_and_feature_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = sine(500.0, 1600, 0.5);
        let p = dir.path().join("a.wav");
        w.write_wav(&p).unwrap();
        let back = Waveform::read_wav(&p).unwrap();
        assert_eq!(back.len(), w.len());
        assert!(back.samples().iter().zip(w.samples()).all(|(a, b)| (a - b).abs() < 1e-4));
        let f = extract(&w).unwrap();
        let fp = dir.path().join("a.avtf");
        f.write(&fp).unwrap();
        assert_eq!(AcousticFeatures::read(&fp).unwrap(), f);
    }
}
