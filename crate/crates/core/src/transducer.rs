//! Character-level RNN transducer over fused audio-visual features.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::acoustic::FEATURE_DIM;
use crate::attention::argmax;
use crate::autodiff::nn::lstm_cell;
use crate::autodiff::ops::log_softmax_row;
use crate::autodiff::{Graph, NodeId, Op, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const VOCAB_SIZE: usize = 29;
pub const ENCODER_PREFIX: &str = "asr/encoder";
pub const DECODER_PREFIX: &str = "asr/decoder";
pub const JOINT_PREFIX: &str = "asr/joint";

/// `blank, a..z, space, apostrophe`.
pub fn token_char(id: usize) -> Option<char> {
    match id {
        1..=26 => Some((b'a' + (id - 1) as u8) as char),
        27 => Some(' '),
        28 => Some('\''),
        _ => None,
    }
}

pub fn char_token(c: char) -> Option<usize> {
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize + 1),
        ' ' => Some(27),
        '\'' => Some(28),
        _ => None,
    }
}

/// Non-blank token sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Transcript {
    ids: Vec<usize>,
}

impl Transcript {
    pub fn from_ids(ids: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i == BLANK || i >= VOCAB_SIZE) {
            return Err(Error::Invalid(format!("token id {bad} is blank or out of range")));
        }
        Ok(Self { ids })
    }

    /// Lowercases `text`; any character outside the vocabulary is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        text.chars()
            .flat_map(char::to_lowercase)
            .map(|c| char_token(c).ok_or_else(|| Error::Invalid(format!("character {c:?} not in vocabulary"))))
            .collect::<Result<Vec<_>>>()
            .map(|ids| Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn text(&self) -> String {
        self.ids.iter().filter_map(|&i| token_char(i)).collect()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Concatenates acoustic and visual features along the last axis, acoustic
/// first.
pub fn fuse(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (an, vn) = (g.input(a.clone()), g.input(v.clone()));
    let f = g.concat_last(an, vn)?;
    Ok(g.value(f).clone())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Negative log-likelihood of `targets` under a `[T, U+1, V]` logit lattice,
/// summed over all monotone alignments.
struct RnntLoss {
    targets: Vec<usize>,
    lp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_p: f64,
}

impl RnntLoss {
    fn new(targets: &[usize]) -> Self {
        Self {
            targets: targets.to_vec(),
            lp: Vec::new(),
            alpha: Vec::new(),
            beta: Vec::new(),
            log_p: 0.0,
        }
    }
}

impl Op for RnntLoss {
    fn name(&self) -> &'static str {
        "rnnt_loss"
    }

    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let s = x[0].shape();
        if s.len() != 3 || s[1] != self.targets.len() + 1 || s[2] == 0 {
            return Err(Error::shape(
                "rnnt_loss",
                format!("lattice {s:?} for {} target tokens", self.targets.len()),
            ));
        }
        let (t_len, u1, v) = (s[0], s[1], s[2]);
        if t_len == 0 {
            return Err(Error::Invalid("rnnt_loss needs at least one frame".into()));
        }
        if let Some(&bad) = self.targets.iter().find(|&&y| y == BLANK || y >= v) {
            return Err(Error::Invalid(format!("target token {bad} is blank or out of range")));
        }
        self.lp = vec![0.0; x[0].len()];
        for (row, o) in x[0].data().chunks(v).zip(self.lp.chunks_mut(v)) {
            log_softmax_row(row, o);
        }
        let lp = |t: usize, u: usize, k: usize| self.lp[(t * u1 + u) * v + k];
        let ninf = f64::NEG_INFINITY;
        let mut alpha = vec![ninf; t_len * u1];
        alpha[0] = 0.0;
        for t in 0..t_len {
            for u in 0..u1 {
                if t == 0 && u == 0 {
                    continue;
                }
                let mut a = ninf;
                if t > 0 {
                    a = alpha[(t - 1) * u1 + u] + lp(t - 1, u, BLANK);
                }
                if u > 0 {
                    a = log_add(a, alpha[t * u1 + u - 1] + lp(t, u - 1, self.targets[u - 1]));
                }
                alpha[t * u1 + u] = a;
            }
        }
        let mut beta = vec![ninf; t_len * u1];
        for t in (0..t_len).rev() {
            for u in (0..u1).rev() {
                let mut b = if t + 1 < t_len {
                    beta[(t + 1) * u1 + u] + lp(t, u, BLANK)
                } else if u + 1 == u1 {
                    lp(t, u, BLANK)
                } else {
                    ninf
                };
                if u + 1 < u1 {
                    b = log_add(b, beta[t * u1 + u + 1] + lp(t, u, self.targets[u]));
                }
                beta[t * u1 + u] = b;
            }
        }
        self.log_p = beta[0];
        self.alpha = alpha;
        self.beta = beta;
        if !self.log_p.is_finite() {
            return Err(Error::NonFinite("rnnt log-likelihood".into()));
        }
        Ok(Tensor::scalar(-self.log_p))
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let s = x[0].shape();
        let (t_len, u1, v) = (s[0], s[1], s[2]);
        let scale = g.item();
        let mut d = Tensor::zeros(s);
        let dd = d.data_mut();
        for t in 0..t_len {
            for u in 0..u1 {
                let node = t * u1 + u;
                let a = self.alpha[node];
                let off = node * v;
                let next_blank = if t + 1 < t_len {
                    self.beta[(t + 1) * u1 + u]
                } else if u + 1 == u1 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                };
                // d(-log P)/d lp at this node: minus the posterior of each
                // outgoing transition.
                let mut dlp_blank = -(a + self.lp[off + BLANK] + next_blank - self.log_p).exp();
                let mut label = None;
                if u + 1 < u1 {
                    let y = self.targets[u];
                    label = Some((y, -(a + self.lp[off + y] + self.beta[node + 1] - self.log_p).exp()));
                }
                if !dlp_blank.is_finite() {
                    dlp_blank = 0.0;
                }
                let total = dlp_blank + label.map_or(0.0, |(_, g)| g);
                for k in 0..v {
                    dd[off + k] = -self.lp[off + k].exp() * total;
                }
                dd[off + BLANK] += dlp_blank;
                if let Some((y, gy)) = label {
                    dd[off + y] += gy;
                }
                for k in 0..v {
                    dd[off + k] *= scale;
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

impl Graph {
    pub fn rnnt_loss(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.apply(RnntLoss::new(targets), &[logits])
    }
}

/// Eager RNN-T loss of a `[T, U+1, V]` logit lattice.
pub fn rnnt_loss(logits: &Tensor, target: &Transcript) -> Result<f64> {
    Ok(RnntLoss::new(target.ids()).forward(&[logits])?.item())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrConfig {
    /// Width of the visual block of the fused input (0 for none).
    pub visual_dim: usize,
    pub encoder_layers: usize,
    /// Units per direction.
    pub encoder_units: usize,
    pub embed_dim: usize,
    pub decoder_units: usize,
    pub joint_dim: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self {
            visual_dim: 64,
            encoder_layers: 2,
            encoder_units: 64,
            embed_dim: 32,
            decoder_units: 64,
            joint_dim: 64,
        }
    }
}

impl AsrConfig {
    pub fn input_dim(&self) -> usize {
        FEATURE_DIM + self.visual_dim
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder_units
    }
}

/// Encoder, prediction network and joint network.
#[derive(Clone, Debug, PartialEq)]
pub struct Transducer {
    pub config: AsrConfig,
}

fn init_lstm(params: &mut ParamStore, seed: u64, prefix: &str, n_in: usize, hid: usize) {
    params.init_uniform(seed, &format!("{prefix}/w_ih"), &[n_in, 4 * hid], hid);
    params.init_uniform(seed, &format!("{prefix}/w_hh"), &[hid, 4 * hid], hid);
    let mut b = Tensor::zeros(&[4 * hid]);
    // Forget gate starts open.
    b.data_mut()[hid..2 * hid].fill(1.0);
    params.insert(format!("{prefix}/b"), b);
}

impl Transducer {
    pub fn new(config: AsrConfig) -> Result<Self> {
        if config.encoder_layers == 0 || config.encoder_units == 0 || config.decoder_units == 0 || config.visual_dim == 0 {
            return Err(Error::Config("transducer sizes must be positive".into()));
        }
        Ok(Self { config })
    }

    pub fn init(&self, params: &mut ParamStore, seed: u64) {
        let c = &self.config;
        let mut n_in = c.input_dim();
        for l in 0..c.encoder_layers {
            let p = format!("{ENCODER_PREFIX}/l{l}");
            if l == 0 {
                // Each stream is normalized on its own so the log-mel block
                // does not swamp the visual statistics.
                for (stream, width) in [("a", FEATURE_DIM), ("v", c.visual_dim)] {
                    params.init_const(&format!("{p}/ln_{stream}/g"), &[width], 1.0);
                    params.init_const(&format!("{p}/ln_{stream}/b"), &[width], 0.0);
                }
            } else {
                params.init_const(&format!("{p}/ln/g"), &[n_in], 1.0);
                params.init_const(&format!("{p}/ln/b"), &[n_in], 0.0);
            }
            init_lstm(params, seed, &format!("{p}/fwd"), n_in, c.encoder_units);
            init_lstm(params, seed, &format!("{p}/bwd"), n_in, c.encoder_units);
            n_in = c.encoder_dim();
        }
        params.init_uniform(seed, &format!("{DECODER_PREFIX}/embed"), &[VOCAB_SIZE, c.embed_dim], 1);
        init_lstm(params, seed, &format!("{DECODER_PREFIX}/lstm"), c.embed_dim, c.decoder_units);
        let (e, d, j) = (c.encoder_dim(), c.decoder_units, c.joint_dim);
        params.init_uniform(seed, &format!("{JOINT_PREFIX}/enc/w"), &[e, j], e);
        params.init_const(&format!("{JOINT_PREFIX}/enc/b"), &[j], 0.0);
        params.init_uniform(seed, &format!("{JOINT_PREFIX}/dec/w"), &[d, j], d);
        params.init_uniform(seed, &format!("{JOINT_PREFIX}/out/w"), &[j, VOCAB_SIZE], j);
        params.init_const(&format!("{JOINT_PREFIX}/out/b"), &[VOCAB_SIZE], 0.0);
    }

    fn lstm(&self, g: &mut Graph, params: &ParamStore, x: NodeId, prefix: &str, reverse: bool) -> Result<NodeId> {
        let w_ih = g.param(params, &format!("{prefix}/w_ih"))?;
        let w_hh = g.param(params, &format!("{prefix}/w_hh"))?;
        let b = g.param(params, &format!("{prefix}/b"))?;
        g.lstm(x, w_ih, w_hh, b, reverse)
    }

    fn norm(&self, g: &mut Graph, params: &ParamStore, x: NodeId, name: &str) -> Result<NodeId> {
        let gain = g.param(params, &format!("{name}/g"))?;
        let bias = g.param(params, &format!("{name}/b"))?;
        g.layer_norm(x, gain, bias)
    }

    /// `[T, 240]` acoustic and `[T, D_v]` visual features to `[T, 2 * units]`
    /// encoder states. The streams are fused after the first layer norm.
    pub fn encode(&self, g: &mut Graph, params: &ParamStore, audio: NodeId, visual: NodeId) -> Result<NodeId> {
        let (sa, sv) = (g.shape(audio), g.shape(visual));
        if sa.len() != 2 || sa[1] != FEATURE_DIM || sv.len() != 2 || sv[1] != self.config.visual_dim || sa[0] != sv[0] {
            return Err(Error::shape(
                "encode",
                format!(
                    "expected [T, {FEATURE_DIM}] and [T, {}], got {sa:?} and {sv:?}",
                    self.config.visual_dim
                ),
            ));
        }
        let l0 = format!("{ENCODER_PREFIX}/l0");
        let a = self.norm(g, params, audio, &format!("{l0}/ln_a"))?;
        let v = self.norm(g, params, visual, &format!("{l0}/ln_v"))?;
        let mut n = g.concat_last(a, v)?;
        let mut x = n;
        for l in 0..self.config.encoder_layers {
            let p = format!("{ENCODER_PREFIX}/l{l}");
            if l > 0 {
                n = self.norm(g, params, x, &format!("{p}/ln"))?;
            }
            let f = self.lstm(g, params, n, &format!("{p}/fwd"), false)?;
            let b = self.lstm(g, params, n, &format!("{p}/bwd"), true)?;
            x = g.concat_last(f, b)?;
        }
        Ok(x)
    }

    /// Prediction-network states for prefixes of `target`: row `u` has seen
    /// `target[..u]`. Shape `[U+1, decoder_units]`.
    pub fn predict(&self, g: &mut Graph, params: &ParamStore, target: &Transcript) -> Result<NodeId> {
        let mut ids = Vec::with_capacity(target.len() + 1);
        ids.push(BLANK);
        ids.extend_from_slice(target.ids());
        let table = g.param(params, &format!("{DECODER_PREFIX}/embed"))?;
        let e = g.embedding(table, &ids)?;
        self.lstm(g, params, e, &format!("{DECODER_PREFIX}/lstm"), false)
    }

    /// `[T, U+1, V]` joint logits.
    pub fn lattice(&self, g: &mut Graph, params: &ParamStore, enc: NodeId, target: &Transcript) -> Result<NodeId> {
        let dec = self.predict(g, params, target)?;
        let we = g.param(params, &format!("{JOINT_PREFIX}/enc/w"))?;
        let be = g.param(params, &format!("{JOINT_PREFIX}/enc/b"))?;
        let wd = g.param(params, &format!("{JOINT_PREFIX}/dec/w"))?;
        let wo = g.param(params, &format!("{JOINT_PREFIX}/out/w"))?;
        let bo = g.param(params, &format!("{JOINT_PREFIX}/out/b"))?;
        let ep = g.linear(enc, we, Some(be))?;
        let dp = g.linear(dec, wd, None)?;
        let j = g.joint_add(ep, dp)?;
        let h = g.tanh(j)?;
        g.linear(h, wo, Some(bo))
    }

    pub fn loss(&self, g: &mut Graph, params: &ParamStore, enc: NodeId, target: &Transcript) -> Result<NodeId> {
        let logits = self.lattice(g, params, enc, target)?;
        g.rnnt_loss(logits, target.ids())
    }

    /// Frame-synchronous greedy search over `[T, 2 * units]` encoder states.
    pub fn greedy_decode(&self, params: &ParamStore, enc: &Tensor, max_symbols: usize) -> Result<Transcript> {
        let get = |n: &str| {
            params
                .get(n)
                .ok_or_else(|| Error::MissingParam(n.to_string()))
        };
        let c = &self.config;
        let (jd, hid) = (c.joint_dim, c.decoder_units);
        if enc.rank() != 2 || enc.shape()[1] != c.encoder_dim() {
            return Err(Error::shape("greedy_decode", format!("encoder states {:?}", enc.shape())));
        }
        let mut g = Graph::new();
        let en = g.input(enc.clone());
        let we = g.param(params, &format!("{JOINT_PREFIX}/enc/w"))?;
        let be = g.param(params, &format!("{JOINT_PREFIX}/enc/b"))?;
        let ep = g.linear(en, we, Some(be))?;
        let ep = g.value(ep).clone();

        let embed = get(&format!("{DECODER_PREFIX}/embed"))?;
        let w_ih = get(&format!("{DECODER_PREFIX}/lstm/w_ih"))?;
        let w_hh = get(&format!("{DECODER_PREFIX}/lstm/w_hh"))?;
        let b = get(&format!("{DECODER_PREFIX}/lstm/b"))?;
        let wd = get(&format!("{JOINT_PREFIX}/dec/w"))?;
        let wo = get(&format!("{JOINT_PREFIX}/out/w"))?;
        let bo = get(&format!("{JOINT_PREFIX}/out/b"))?;
        let ed = c.embed_dim;

        let step = |tok: usize, h: &[f64], cs: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let x = &embed.data()[tok * ed..(tok + 1) * ed];
            let mut z = b.data().to_vec();
            for (i, &xv) in x.iter().enumerate() {
                for (zv, wv) in z.iter_mut().zip(&w_ih.data()[i * 4 * hid..(i + 1) * 4 * hid]) {
                    *zv += xv * wv;
                }
            }
            let (mut hn, mut cn) = (vec![0.0; hid], vec![0.0; hid]);
            lstm_cell(&mut z, h, cs, w_hh.data(), &mut hn, &mut cn);
            let mut proj = vec![0.0; jd];
            for (i, &hv) in hn.iter().enumerate() {
                for (p, wv) in proj.iter_mut().zip(&wd.data()[i * jd..(i + 1) * jd]) {
                    *p += hv * wv;
                }
            }
            (hn, cn, proj)
        };

        let zero = vec![0.0; hid];
        let (mut h, mut cs, mut dproj) = step(BLANK, &zero, &zero);
        let mut out = Vec::new();
        let mut logits = vec![0.0; VOCAB_SIZE];
        for t in 0..enc.shape()[0] {
            let er = &ep.data()[t * jd..(t + 1) * jd];
            for _ in 0..max_symbols {
                logits.copy_from_slice(bo.data());
                for (j, (e, d)) in er.iter().zip(&dproj).enumerate() {
                    let a = (e + d).tanh();
                    for (l, wv) in logits.iter_mut().zip(&wo.data()[j * VOCAB_SIZE..(j + 1) * VOCAB_SIZE]) {
                        *l += a * wv;
                    }
                }
                let k = argmax(&logits);
                if k == BLANK {
                    break;
                }
                out.push(k);
                (h, cs, dproj) = step(k, &h, &cs);
            }
        }
        Transcript::from_ids(out)
    }
}
