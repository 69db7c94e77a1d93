//! Checks shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use avsel::acoustic::{Waveform, SAMPLE_RATE};
use avsel::attention::{
    bilinear_scores, select_track, selection_ce_loss, softmax_over_tracks, weighted_visual, AttentionHead, QueryConfig,
};
use avsel::corpus::{generate, mix_noise, synth_babble, synth_utterance, SynthConfig};
use avsel::rng::derive_seed;
use avsel::autodiff::{check_gradient, check_param_gradients, ConvGeometry, ParamStore, Tensor};
use avsel::transducer::{rnnt_loss, AsrConfig, Transcript, Transducer, BLANK};
use avsel::visual::{sync_to_acoustic, Activation, Conv3dLayer, FrontendConfig, VideoTrack, VisualFrontend};
use avsel::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn worst(errs: Vec<(String, f64)>) -> (f64, String) {
    errs.into_iter()
        .map(|(n, e)| (e, n))
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a })
}

/// Bilinear scores, softmax over tracks and the diagonal cross entropy, with
/// respect to the query network, `W` and the keys.
pub fn grad_selection_ce() -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = AttentionHead::new(
        QueryConfig {
            layers: 2,
            kernel: 3,
            hidden: 4,
            dim: 3,
        },
        5,
    )?;
    let mut p = ParamStore::new();
    head.init(&mut p, 2);
    let (b, t) = (3, 4);
    p.insert("keys", random(&mut rng, &[b, t, 5], 1.0));
    let audio: Vec<Tensor> = (0..b).map(|_| random(&mut rng, &[t, 240], 1.0)).collect();
    let errs = check_param_gradients(
        &p,
        |g, p| {
            let qs = audio
                .iter()
                .map(|a| {
                    let x = g.input(a.clone());
                    head.query.forward(g, p, x)
                })
                .collect::<Result<Vec<_>>>()?;
            let k = g.param(p, "keys")?;
            let att = head.attend(g, p, &qs, k)?;
            g.selection_ce(att.log_alpha)
        },
        H,
        Some(40),
    )?;
    Ok(worst(errs))
}

pub fn tiny_asr(visual_dim: usize) -> Result<Transducer> {
    Transducer::new(AsrConfig {
        visual_dim,
        encoder_layers: 2,
        encoder_units: 3,
        embed_dim: 2,
        decoder_units: 3,
        joint_dim: 4,
    })
}

/// Attention-weighted visual features through a two-layer transducer into
/// the RNN-T loss, with respect to the scores, the track features and every
/// transducer parameter.
pub fn grad_weighted_sum_transducer() -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t, m, dv) = (4, 3, 3);
    let asr = tiny_asr(dv)?;
    let mut p = ParamStore::new();
    asr.init(&mut p, 4);
    p.insert("scores", random(&mut rng, &[1, t, m], 2.0));
    p.insert("tracks", random(&mut rng, &[m, t, dv], 1.0));
    let audio = random(&mut rng, &[t, 240], 1.0);
    let target = Transcript::from_ids(vec![3, 1])?;
    let errs = check_param_gradients(
        &p,
        |g, p| {
            let s = g.param(p, "scores")?;
            let alpha = g.softmax(s)?;
            let v = g.param(p, "tracks")?;
            let ws = g.weighted_visual(alpha, v)?;
            let vis = g.reshape(ws, &[t, dv])?;
            let a = g.input(audio.clone());
            let enc = asr.encode(g, p, a, vis)?;
            asr.loss(g, p, enc, &target)
        },
        H,
        Some(12),
    )?;
    Ok(worst(errs))
}

pub fn grad_rnnt_logits() -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random(&mut rng, &[4, 3, 5], 2.0);
    let err = check_gradient(|g, x| g.rnnt_loss(x, &[2, 4]), &logits, H)?;
    Ok((err, "logits".into()))
}

pub fn grad_conv3d() -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let geom = ConvGeometry {
        kernel: [3, 3, 3],
        stride: [2, 1],
    };
    let mut p = ParamStore::new();
    p.insert("x", random(&mut rng, &[3, 5, 4, 2], 1.0));
    p.insert("w", random(&mut rng, &[27 * 2, 3], 0.5));
    p.insert("b", random(&mut rng, &[3], 0.5));
    let mix = random(&mut rng, &[3, 3, 4, 3], 1.0);
    let errs = check_param_gradients(
        &p,
        |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            let y = g.conv3d(x, w, b, geom)?;
            let c = g.input(mix.clone());
            let z = g.mul(y, c)?;
            g.sum(z)
        },
        H,
        None,
    )?;
    Ok(worst(errs))
}

pub fn grad_lstm() -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (t, n, h) = (4, 3, 2);
    let mut p = ParamStore::new();
    p.insert("x", random(&mut rng, &[t, n], 1.0));
    p.insert("w_ih", random(&mut rng, &[n, 4 * h], 0.7));
    p.insert("w_hh", random(&mut rng, &[h, 4 * h], 0.7));
    p.insert("b", random(&mut rng, &[4 * h], 0.5));
    let mix = random(&mut rng, &[t, h], 1.0);
    let mut out = (0.0, String::new());
    for reverse in [false, true] {
        let errs = check_param_gradients(
            &p,
            |g, p| {
                let (x, wi, wh, b) = (g.param(p, "x")?, g.param(p, "w_ih")?, g.param(p, "w_hh")?, g.param(p, "b")?);
                let y = g.lstm(x, wi, wh, b, reverse)?;
                let c = g.input(mix.clone());
                let z = g.mul(y, c)?;
                g.sum(z)
            },
            H,
            None,
        )?;
        let w = worst(errs);
        if w.0 >= out.0 {
            out = (w.0, format!("{}{}", if reverse { "reverse " } else { "" }, w.1));
        }
    }
    Ok(out)
}

/// Two conv layers over 8x8 faces, pooled and projected.
pub fn grad_visual_frontend() -> Result<(f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layer = |c, s| Conv3dLayer {
        out_channels: c,
        kernel: [3, 3, 3],
        stride: [s, s],
    };
    let fe = VisualFrontend::new(
        FrontendConfig {
            height: 8,
            width: 8,
            layers: vec![layer(3, 1), layer(4, 2)],
            activation: Activation::Relu,
            feature_dim: 3,
            project: true,
        },
        "visual",
    )?;
    let mut p = ParamStore::new();
    fe.init(&mut p, 9);
    let video = random(&mut rng, &[3, 8, 8, 3], 1.0);
    let mix = random(&mut rng, &[3, 3], 1.0);
    let errs = check_param_gradients(
        &p,
        |g, p| {
            let v = g.input(video.clone());
            let y = fe.forward(g, p, v)?;
            let c = g.input(mix.clone());
            let z = g.mul(y, c)?;
            g.sum(z)
        },
        H,
        Some(30),
    )?;
    Ok(worst(errs))
}

pub type GradCheck = (&'static str, fn() -> Result<(f64, String)>);

pub const GRADIENT_SUITE: [GradCheck; 6] = [
    ("bilinear + softmax + selection CE", grad_selection_ce),
    ("weighted sum through 2-layer transducer", grad_weighted_sum_transducer),
    ("RNN-T loss wrt logits", grad_rnnt_logits),
    ("conv3d", grad_conv3d),
    ("LSTM", grad_lstm),
    ("visual frontend", grad_visual_frontend),
];

/// Log-probability of one alignment path by walking the lattice.
fn path_log_prob(lp: &Tensor, target: &[usize], moves: &[bool]) -> f64 {
    let (u1, v) = (lp.shape()[1], lp.shape()[2]);
    let (mut t, mut u) = (0, 0);
    let mut total = 0.0;
    for &emit in moves {
        let row = &lp.data()[(t * u1 + u) * v..(t * u1 + u + 1) * v];
        if emit {
            total += row[target[u]];
            u += 1;
        } else {
            total += row[BLANK];
            t += 1;
        }
    }
    total
}

/// Every arrangement of `u` emissions and `t` blanks whose last move is a
/// blank, i.e. every monotone alignment through the lattice.
fn alignments(t: usize, u: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let n = t + u;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == u && mask & (1 << (n - 1)) == 0 {
            out.push((0..n).map(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// -log sum over enumerated paths, computed independently of the
/// forward-backward recursion.
pub fn brute_force_rnnt(logits: &Tensor, target: &[usize]) -> f64 {
    let (t, u1, v) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let mut lp = logits.clone();
    for row in lp.data_mut().chunks_mut(v) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
        row.iter_mut().for_each(|x| *x -= z);
    }
    let logs: Vec<f64> = alignments(t, u1 - 1)
        .iter()
        .map(|p| path_log_prob(&lp, target, p))
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    -(logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m)
}

/// Largest |loss - enumeration| over `draws` random logits for every
/// `T <= 4`, `U <= 3`, `V <= 3`.
pub fn rnnt_oracle_sweep(draws: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for t in 1..=4 {
        for u in 0..=3 {
            for v in 1..=3 {
                if u > 0 && v < 2 {
                    continue;
                }
                for _ in 0..draws {
                    let logits = random(&mut rng, &[t, u + 1, v], 3.0);
                    let target: Vec<usize> = (0..u).map(|_| rng.random_range(1..v)).collect();
                    let ours = rnnt_loss(&logits, &Transcript::from_ids(target.clone())?)?;
                    worst = worst.max((ours - brute_force_rnnt(&logits, &target)).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Worst `|sum_m alpha - 1|` over random score tensors whose entries reach
/// `+-scale`, including rows with a single dominant track.
pub fn alpha_row_sum_error(draws: usize, scale: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for d in 0..draws {
        let m = [1, 2, 4, 8][d % 4];
        let mut s = random(&mut rng, &[2, 5, m], scale);
        if d % 3 == 0 {
            for row in s.data_mut().chunks_mut(m) {
                row.iter_mut().for_each(|v| *v = -scale);
                row[rng.random_range(0..m)] = scale;
            }
        }
        let a = softmax_over_tracks(&s);
        for row in a.data().chunks(m) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// Whether `select_track` gives the same choice after strictly increasing
/// per-frame transforms of the scores, for every draw.
pub fn select_track_transform_invariant(draws: usize) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for d in 0..draws {
        let (t, m) = (6, [2, 3, 4, 8][d % 4]);
        let s = random(&mut rng, &[1, t, m], 10.0);
        let base = select_track(&s)?;
        let mut moved = s.clone();
        for row in moved.data_mut().chunks_mut(m) {
            let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(-50.0..50.0));
            let which = rng.random_range(0..3);
            for v in row.iter_mut() {
                *v = match which {
                    0 => a * *v + b,
                    1 => v.powi(3) + b,
                    _ => (*v / a).atan(),
                };
            }
        }
        if select_track(&moved)? != base {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Permuting the tracks (keys and values together) permutes alpha along the
/// track axis and leaves the weighted visual features unchanged. Returns the
/// worst deviation from either property.
pub fn permutation_error(draws: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for d in 0..draws {
        let (b, t, m, dq, dk, dv) = (2, 4, [2, 3, 4, 8][d % 4], 3, 5, 4);
        let q = random(&mut rng, &[b, t, dq], 1.0);
        let w = random(&mut rng, &[dq, dk], 1.0);
        let k = random(&mut rng, &[m, t, dk], 1.0);
        let v = random(&mut rng, &[m, t, dv], 1.0);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let permute = |x: &Tensor| {
            let n = x.len() / m;
            let mut out = Vec::with_capacity(x.len());
            for &p in &perm {
                out.extend_from_slice(&x.data()[p * n..(p + 1) * n]);
            }
            Tensor::new(x.shape(), out).unwrap()
        };
        let alpha = softmax_over_tracks(&bilinear_scores(&q, &w, &k)?);
        let alpha_p = softmax_over_tracks(&bilinear_scores(&q, &w, &permute(&k))?);
        for (row, row_p) in alpha.data().chunks(m).zip(alpha_p.data().chunks(m)) {
            for (j, &p) in perm.iter().enumerate() {
                worst = worst.max((row_p[j] - row[p]).abs());
            }
        }
        let vis = weighted_visual(&alpha, &v)?;
        let vis_p = weighted_visual(&alpha_p, &permute(&v))?;
        for (x, y) in vis.data().iter().zip(vis_p.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// `(M, |CE(uniform alpha) - ln M|)` for each `M`.
pub fn uniform_ce_errors(ms: &[usize]) -> Result<Vec<(usize, f64)>> {
    ms.iter()
        .map(|&m| {
            let a = Tensor::new(&[m, 7, m], vec![1.0 / m as f64; m * 7 * m])?;
            Ok((m, (selection_ce_loss(&a)? - (m as f64).ln()).abs()))
        })
        .collect()
}

/// One second of a synthetic utterance's audio, padded with silence if the
/// utterance is shorter.
pub fn one_second() -> Result<Waveform> {
    let u = synth_utterance("probe", 31, "judge five jazz", &SynthConfig::default())?;
    let mut s = u.waveform.samples().to_vec();
    s.resize(SAMPLE_RATE as usize, 0.0);
    Waveform::new(s)
}

/// Output frame counts of nearest-neighbour sync for one-second videos at
/// each frame rate, against target length `t`.
pub fn sync_lengths(t: usize, rates: &[f64]) -> Result<Vec<(f64, usize)>> {
    rates
        .iter()
        .map(|&fps| {
            let n = fps as usize;
            let v = VideoTrack::new(vec![0.5; n * 4 * 4 * 3], n, 4, 4, fps)?;
            Ok((fps, sync_to_acoustic(&v, t)?.num_frames()))
        })
        .collect()
}

/// Worst `|achieved - requested|` SNR in dB over random utterance and babble
/// pairs, measuring the noise as `mix - signal`. Pairs that clip are skipped;
/// returns the error and the number of pairs measured.
pub fn snr_fidelity(pairs: usize) -> Result<(f64, usize)> {
    let cfg = SynthConfig::default();
    let utts = generate(41, pairs, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut worst, mut measured): (f64, usize) = (0.0, 0);
    for (i, u) in utts.iter().enumerate() {
        let noise = synth_babble(derive_seed(43, "snr", i as u64), rng.random_range(4000..40000), &cfg)?;
        let snr = rng.random_range(-5.0..30.0);
        let mix = mix_noise(&u.waveform, &noise, snr)?;
        if mix.clipped > 0 {
            continue;
        }
        let s = u.waveform.samples();
        let ps = s.iter().map(|&x| x as f64 * x as f64).sum::<f64>();
        let pn = mix
            .waveform
            .samples()
            .iter()
            .zip(s)
            .map(|(&y, &x)| (y as f64 - x as f64).powi(2))
            .sum::<f64>();
        worst = worst.max((10.0 * (ps / pn).log10() - snr).abs());
        measured += 1;
    }
    Ok((worst, measured))
}
