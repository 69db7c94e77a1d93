//! Audio-queried bilinear attention over competing face tracks.
//!
//! Shapes: queries `[B, T, D_q]`, keys/values `[M, T, D]`, scores and
//! weights `[B, T, M]`.

use serde::{Deserialize, Serialize};

use crate::acoustic::FEATURE_DIM;
use crate::autodiff::{Graph, NodeId, Op, ParamStore, Tensor};
use crate::autodiff::ops::softmax_row;
use crate::autodiff::tensor::gemm;
use crate::error::{Error, Result};

pub const W_PARAM: &str = "selector/W";
pub const QUERY_PREFIX: &str = "selector/query";
pub const KEYS_PREFIX: &str = "selector/keys";

/// `S[b,t,m] = sum_qk Q[b,t,q] W[q,k] K[m,t,k]`.
struct Bilinear {
    /// `Q W`, `[B*T, D_k]`.
    qw: Vec<f64>,
}

impl Op for Bilinear {
    fn name(&self) -> &'static str {
        "bilinear_scores"
    }

    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (q, w, k) = (x[0], x[1], x[2]);
        let (qs, ws, ks) = (q.shape(), w.shape(), k.shape());
        if qs.len() != 3 || ws.len() != 2 || ks.len() != 3 || qs[2] != ws[0] || ks[2] != ws[1] || qs[1] != ks[1] {
            return Err(Error::shape(
                "bilinear_scores",
                format!("Q {qs:?}, W {ws:?}, K {ks:?}"),
            ));
        }
        let (b, t, dq, dk, m) = (qs[0], qs[1], qs[2], ws[1], ks[0]);
        self.qw = vec![0.0; b * t * dk];
        gemm(b * t, dq, dk, q.data(), false, w.data(), false, &mut self.qw, 0.0);
        let mut s = vec![0.0; b * t * m];
        for bi in 0..b {
            for ti in 0..t {
                let p = &self.qw[(bi * t + ti) * dk..(bi * t + ti + 1) * dk];
                for mi in 0..m {
                    let kv = &k.data()[(mi * t + ti) * dk..(mi * t + ti + 1) * dk];
                    s[(bi * t + ti) * m + mi] = p.iter().zip(kv).map(|(a, c)| a * c).sum();
                }
            }
        }
        Tensor::new(&[b, t, m], s)
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (q, w, k) = (x[0], x[1], x[2]);
        let (b, t, dq) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let (dk, m) = (w.shape()[1], k.shape()[0]);
        let gs = g.data();
        let mut dqw = vec![0.0; b * t * dk];
        let mut dk_t = need[2].then(|| Tensor::zeros(k.shape()));
        for bi in 0..b {
            for ti in 0..t {
                let row = bi * t + ti;
                let p = &self.qw[row * dk..(row + 1) * dk];
                let dp = &mut dqw[row * dk..(row + 1) * dk];
                for mi in 0..m {
                    let gv = gs[row * m + mi];
                    let off = (mi * t + ti) * dk;
                    for (d, kv) in dp.iter_mut().zip(&k.data()[off..off + dk]) {
                        *d += gv * kv;
                    }
                    if let Some(dkt) = dk_t.as_mut() {
                        for (d, pv) in dkt.data_mut()[off..off + dk].iter_mut().zip(p) {
                            *d += gv * pv;
                        }
                    }
                }
            }
        }
        let dq_t = if need[0] {
            let mut d = Tensor::zeros(q.shape());
            gemm(b * t, dk, dq, &dqw, false, w.data(), true, d.data_mut(), 0.0);
            Some(d)
        } else {
            None
        };
        let dw_t = if need[1] {
            let mut d = Tensor::zeros(w.shape());
            gemm(dq, b * t, dk, q.data(), true, &dqw, false, d.data_mut(), 0.0);
            Some(d)
        } else {
            None
        };
        Ok(vec![dq_t, dw_t, dk_t])
    }
}

/// `V'[b,t,:] = sum_m alpha[b,t,m] V[m,t,:]`.
struct WeightedSum;

impl Op for WeightedSum {
    fn name(&self) -> &'static str {
        "weighted_visual"
    }

    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (a, v) = (x[0], x[1]);
        let (as_, vs) = (a.shape(), v.shape());
        if as_.len() != 3 || vs.len() != 3 || as_[2] != vs[0] || as_[1] != vs[1] {
            return Err(Error::shape("weighted_visual", format!("alpha {as_:?}, V {vs:?}")));
        }
        let (b, t, m, d) = (as_[0], as_[1], as_[2], vs[2]);
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            for ti in 0..t {
                let o = &mut out[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for mi in 0..m {
                    let al = a.data()[(bi * t + ti) * m + mi];
                    let vr = &v.data()[(mi * t + ti) * d..(mi * t + ti + 1) * d];
                    for (ov, vv) in o.iter_mut().zip(vr) {
                        *ov += al * vv;
                    }
                }
            }
        }
        Tensor::new(&[b, t, d], out)
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (a, v) = (x[0], x[1]);
        let (b, t, m) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let d = v.shape()[2];
        let mut da = need[0].then(|| Tensor::zeros(a.shape()));
        let mut dv = need[1].then(|| Tensor::zeros(v.shape()));
        for bi in 0..b {
            for ti in 0..t {
                let gr = &g.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for mi in 0..m {
                    let ai = (bi * t + ti) * m + mi;
                    let voff = (mi * t + ti) * d;
                    if let Some(da) = da.as_mut() {
                        da.data_mut()[ai] = gr.iter().zip(&v.data()[voff..voff + d]).map(|(p, q)| p * q).sum();
                    }
                    if let Some(dv) = dv.as_mut() {
                        let al = a.data()[ai];
                        for (o, gv) in dv.data_mut()[voff..voff + d].iter_mut().zip(gr) {
                            *o += al * gv;
                        }
                    }
                }
            }
        }
        Ok(vec![da, dv])
    }
}

/// Mean of `-log_alpha[b,t,b]` over `b` and `t`; requires `B = M`.
struct DiagonalNll;

impl Op for DiagonalNll {
    fn name(&self) -> &'static str {
        "selection_ce"
    }

    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let s = x[0].shape();
        if s.len() != 3 || s[0] != s[2] {
            return Err(Error::shape(
                "selection_ce",
                format!("needs matched batches with B = M, got {s:?}"),
            ));
        }
        let (b, t) = (s[0], s[1]);
        let mut acc = 0.0;
        for bi in 0..b {
            for ti in 0..t {
                acc -= x[0].data()[(bi * t + ti) * b + bi];
            }
        }
        Ok(Tensor::scalar(acc / (b * t) as f64))
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let s = x[0].shape();
        let (b, t) = (s[0], s[1]);
        let scale = -g.item() / (b * t) as f64;
        let mut d = Tensor::zeros(s);
        for bi in 0..b {
            for ti in 0..t {
                d.data_mut()[(bi * t + ti) * b + bi] = scale;
            }
        }
        Ok(vec![Some(d)])
    }
}

impl Graph {
    pub fn bilinear_scores(&mut self, q: NodeId, w: NodeId, k: NodeId) -> Result<NodeId> {
        self.apply(Bilinear { qw: Vec::new() }, &[q, w, k])
    }

    pub fn weighted_visual(&mut self, alpha: NodeId, v: NodeId) -> Result<NodeId> {
        self.apply(WeightedSum, &[alpha, v])
    }

    /// Cross entropy of the selection from stabilized log-weights
    /// (`log_softmax` of the scores).
    pub fn selection_ce(&mut self, log_alpha: NodeId) -> Result<NodeId> {
        self.apply(DiagonalNll, &[log_alpha])
    }
}

/// Eager bilinear scores.
pub fn bilinear_scores(q: &Tensor, w: &Tensor, k: &Tensor) -> Result<Tensor> {
    Bilinear { qw: Vec::new() }.forward(&[q, w, k])
}

/// Stable softmax along the track axis.
pub fn softmax_over_tracks(s: &Tensor) -> Tensor {
    let m = s.last_dim();
    let mut out = Tensor::zeros(s.shape());
    for (row, o) in s.data().chunks(m).zip(out.data_mut().chunks_mut(m)) {
        softmax_row(row, o);
    }
    out
}

pub fn weighted_visual(alpha: &Tensor, v: &Tensor) -> Result<Tensor> {
    WeightedSum.forward(&[alpha, v])
}

/// Per-frame argmax over tracks for `B = 1` scores; ties go to the lowest
/// index.
pub fn select_track(s: &Tensor) -> Result<Vec<usize>> {
    let sh = s.shape();
    if sh.len() != 3 || sh[0] != 1 || sh[2] == 0 {
        return Err(Error::shape("select_track", format!("expected [1, T, M], got {sh:?}")));
    }
    Ok(s.data().chunks(sh[2]).map(argmax).collect())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Selection cross entropy from attention weights directly.
pub fn selection_ce_loss(alpha: &Tensor) -> Result<f64> {
    let la = alpha.map(f64::ln);
    Ok(DiagonalNll.forward(&[&la])?.item())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryConfig {
    pub layers: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dim: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            kernel: 3,
            hidden: 64,
            dim: 64,
        }
    }
}

impl QueryConfig {
    /// Frames on either side of `t` that can influence query `t`.
    pub fn receptive_radius(&self) -> usize {
        self.layers * (self.kernel / 2)
    }
}

/// Layer-normalized acoustic features through a stack of temporal
/// convolutions (ReLU between layers, linear output).
#[derive(Clone, Debug, PartialEq)]
pub struct QueryNet {
    pub config: QueryConfig,
    pub prefix: String,
}

impl QueryNet {
    pub fn new(config: QueryConfig) -> Result<Self> {
        if config.layers == 0 || config.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "query net needs >= 1 layer and an odd kernel, got {} / {}",
                config.layers, config.kernel
            )));
        }
        Ok(Self {
            config,
            prefix: QUERY_PREFIX.into(),
        })
    }

    fn name(&self, s: &str) -> String {
        format!("{}/{s}", self.prefix)
    }

    pub fn init(&self, params: &mut ParamStore, seed: u64) {
        params.init_const(&self.name("ln/g"), &[FEATURE_DIM], 1.0);
        params.init_const(&self.name("ln/b"), &[FEATURE_DIM], 0.0);
        let mut cin = FEATURE_DIM;
        for i in 0..self.config.layers {
            let cout = if i + 1 == self.config.layers {
                self.config.dim
            } else {
                self.config.hidden
            };
            let fan_in = self.config.kernel * cin;
            params.init_he(seed, &self.name(&format!("conv{i}/w")), &[fan_in, cout], fan_in);
            params.init_const(&self.name(&format!("conv{i}/b")), &[cout], 0.0);
            cin = cout;
        }
    }

    /// `[T, 240]` acoustic features to `[T, D_q]` queries.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, feats: NodeId) -> Result<NodeId> {
        let s = g.shape(feats);
        if s.len() != 2 || s[1] != FEATURE_DIM {
            return Err(Error::shape("compute_queries", format!("expected [T, {FEATURE_DIM}], got {s:?}")));
        }
        let gain = g.param(params, &self.name("ln/g"))?;
        let bias = g.param(params, &self.name("ln/b"))?;
        let mut x = g.layer_norm(feats, gain, bias)?;
        for i in 0..self.config.layers {
            let w = g.param(params, &self.name(&format!("conv{i}/w")))?;
            let b = g.param(params, &self.name(&format!("conv{i}/b")))?;
            x = g.conv1d(x, w, b, self.config.kernel)?;
            if i + 1 < self.config.layers {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// Query network plus the bilinear matrix; keys are supplied by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    pub query: QueryNet,
    pub key_dim: usize,
}

/// Graph nodes produced by one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub scores: NodeId,
    pub log_alpha: NodeId,
    pub alpha: NodeId,
}

impl AttentionHead {
    pub fn new(config: QueryConfig, key_dim: usize) -> Result<Self> {
        Ok(Self {
            query: QueryNet::new(config)?,
            key_dim,
        })
    }

    pub fn init(&self, params: &mut ParamStore, seed: u64) {
        self.query.init(params, seed);
        let dq = self.query.config.dim;
        params.init_uniform(seed, W_PARAM, &[dq, self.key_dim], dq);
    }

    /// Scores `B` query sequences (each `[T, D_q]`) against keys `[M, T, D_k]`.
    pub fn attend(&self, g: &mut Graph, params: &ParamStore, queries: &[NodeId], keys: NodeId) -> Result<Attended> {
        let q = g.stack(queries)?;
        let w = g.param(params, W_PARAM)?;
        let scores = g.bilinear_scores(q, w, keys)?;
        let log_alpha = g.log_softmax(scores)?;
        let alpha = g.softmax(scores)?;
        Ok(Attended {
            scores,
            log_alpha,
            alpha,
        })
    }
}
