//! Coarse-grained neural-network ops with hand-written backward passes.

use super::graph::{Graph, NodeId, Op};
use super::ops::sigmoid;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 3D convolution over `[T, H, W, C]` inputs. Time always uses
/// stride 1 and same-padding so the output keeps the input frame count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 2],
}

impl ConvGeometry {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let [_, kh, kw] = self.kernel;
        let [sh, sw] = self.stride;
        let (ph, pw) = (kh / 2, kw / 2);
        ((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1)
    }
}

struct Conv3d {
    geom: ConvGeometry,
    cols: Vec<f64>,
}

impl Conv3d {
    fn dims(&self, x: &Tensor) -> (usize, usize, usize, usize, usize, usize) {
        let s = x.shape();
        let (ho, wo) = self.geom.out_hw(s[1], s[2]);
        (s[0], s[1], s[2], s[3], ho, wo)
    }

    /// Calls `f(col_row, col_offset, input_offset)` for every in-bounds tap.
    fn for_each_tap(&self, x_shape: &[usize], mut f: impl FnMut(usize, usize, usize)) {
        let (t_len, h, w, c) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let [kt, kh, kw] = self.geom.kernel;
        let [sh, sw] = self.geom.stride;
        let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
        let (ho, wo) = self.geom.out_hw(h, w);
        let k = kt * kh * kw * c;
        for t in 0..t_len {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (t * ho + oy) * wo + ox;
                    for dt in 0..kt {
                        let it = t as isize + dt as isize - pt as isize;
                        if it < 0 || it >= t_len as isize {
                            continue;
                        }
                        for dy in 0..kh {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..kw {
                                let ix = (ox * sw + dx) as isize - pw as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let col = ((dt * kh + dy) * kw + dx) * c;
                                let src = ((it as usize * h + iy as usize) * w + ix as usize) * c;
                                f(row * k + col, src, c);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Op for Conv3d {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (inp, w, b) = (x[0], x[1], x[2]);
        if inp.rank() != 4 {
            return Err(Error::shape("conv3d", format!("input must be [T,H,W,C], got {:?}", inp.shape())));
        }
        let [kt, kh, kw] = self.geom.kernel;
        let (t_len, h, wd, c, ho, wo) = self.dims(inp);
        if h < kh || wd < kw || kt == 0 || self.geom.stride.contains(&0) {
            return Err(Error::shape(
                "conv3d",
                format!("spatial input {h}x{wd} too small for kernel {kh}x{kw}"),
            ));
        }
        let k = kt * kh * kw * c;
        if w.rank() != 2 || w.shape()[0] != k {
            return Err(Error::shape("conv3d", format!("weight {:?}, expected [{k}, Cout]", w.shape())));
        }
        let cout = w.shape()[1];
        if b.shape() != [cout] {
            return Err(Error::shape("conv3d", format!("bias {:?}, expected [{cout}]", b.shape())));
        }
        let rows = t_len * ho * wo;
        let mut cols = vec![0.0; rows * k];
        let src = inp.data();
        self.for_each_tap(inp.shape(), |dst, s, n| {
            cols[dst..dst + n].copy_from_slice(&src[s..s + n]);
        });
        let mut out = vec![0.0; rows * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(b.data());
        }
        gemm(rows, k, cout, &cols, false, w.data(), false, &mut out, 1.0);
        self.cols = cols;
        Tensor::new(&[t_len, ho, wo, cout], out)
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (inp, w) = (x[0], x[1]);
        let k = w.shape()[0];
        let cout = w.shape()[1];
        let rows = g.rows();
        let dw = need[1].then(|| {
            let mut d = vec![0.0; k * cout];
            gemm(k, rows, cout, &self.cols, true, g.data(), false, &mut d, 0.0);
            Tensor::new(&[k, cout], d).expect("shape")
        });
        let db = need[2].then(|| {
            let mut d = vec![0.0; cout];
            for row in g.data().chunks(cout) {
                for (o, v) in d.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Tensor::new(&[cout], d).expect("shape")
        });
        let dx = need[0].then(|| {
            let mut dcols = vec![0.0; rows * k];
            gemm(rows, cout, k, g.data(), false, w.data(), true, &mut dcols, 0.0);
            let mut dx = Tensor::zeros(inp.shape());
            let d = dx.data_mut();
            self.for_each_tap(inp.shape(), |src_col, dst, n| {
                for (o, v) in d[dst..dst + n].iter_mut().zip(&dcols[src_col..src_col + n]) {
                    *o += v;
                }
            });
            dx
        });
        Ok(vec![dx, dw, db])
    }
}

/// Mean over the two spatial axes: `[T, H, W, C] -> [T, C]`.
struct SpatialMean;
impl Op for SpatialMean {
    fn name(&self) -> &'static str {
        "spatial_mean"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let s = x[0].shape();
        if s.len() != 4 {
            return Err(Error::shape("spatial_mean", format!("{s:?}")));
        }
        let (t_len, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut out = vec![0.0; t_len * c];
        for t in 0..t_len {
            let o = &mut out[t * c..(t + 1) * c];
            for p in 0..hw {
                let base = (t * hw + p) * c;
                for (ov, v) in o.iter_mut().zip(&x[0].data()[base..base + c]) {
                    *ov += v;
                }
            }
            for v in o.iter_mut() {
                *v /= hw as f64;
            }
        }
        Tensor::new(&[t_len, c], out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let s = x[0].shape();
        let (t_len, hw, c) = (s[0], s[1] * s[2], s[3]);
        let mut d = Tensor::zeros(s);
        let dd = d.data_mut();
        for t in 0..t_len {
            for p in 0..hw {
                let base = (t * hw + p) * c;
                for (o, v) in dd[base..base + c].iter_mut().zip(&g.data()[t * c..(t + 1) * c]) {
                    *o = v / hw as f64;
                }
            }
        }
        Ok(vec![Some(d)])
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization over the last axis with learned gain and bias.
struct LayerNorm {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}
impl Op for LayerNorm {
    fn name(&self) -> &'static str {
        "layer_norm"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let d = x[0].last_dim();
        if x[1].shape() != [d] || x[2].shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", x[0].shape(), x[1].shape(), x[2].shape()),
            ));
        }
        let rows = x[0].rows();
        self.xhat = vec![0.0; rows * d];
        self.inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(x[0].shape());
        for r in 0..rows {
            let row = &x[0].data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            self.inv_std[r] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                self.xhat[r * d + j] = xh;
                out.data_mut()[r * d + j] = xh * x[1].data()[j] + x[2].data()[j];
            }
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let d = x[0].last_dim();
        let rows = x[0].rows();
        let gain = x[1].data();
        let mut dx = Tensor::zeros(x[0].shape());
        let mut dgain = vec![0.0; d];
        let mut dbias = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let gr = &g.data()[r * d..(r + 1) * d];
            let xh = &self.xhat[r * d..(r + 1) * d];
            for j in 0..d {
                dgain[j] += gr[j] * xh[j];
                dbias[j] += gr[j];
                dxhat[j] = gr[j] * gain[j];
            }
            if need[0] {
                let m1 = dxhat.iter().sum::<f64>() / d as f64;
                let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                let inv = self.inv_std[r];
                for j in 0..d {
                    dx.data_mut()[r * d + j] = inv * (dxhat[j] - m1 - xh[j] * m2);
                }
            }
        }
        Ok(vec![
            need[0].then_some(dx),
            need[1].then(|| Tensor::new(&[d], dgain).expect("shape")),
            need[2].then(|| Tensor::new(&[d], dbias).expect("shape")),
        ])
    }
}

/// One LSTM cell update. `z` holds the pre-activations `[i, f, g, o]`
/// (already including the input projection and bias); on return it holds the
/// activated gates. Returns nothing; `h`/`c` are updated in place.
pub fn lstm_cell(z: &mut [f64], h_prev: &[f64], c_prev: &[f64], w_hh: &[f64], h: &mut [f64], c: &mut [f64]) {
    let hid = h_prev.len();
    let four = 4 * hid;
    for (j, &hv) in h_prev.iter().enumerate() {
        if hv != 0.0 {
            let row = &w_hh[j * four..(j + 1) * four];
            for (zv, wv) in z.iter_mut().zip(row) {
                *zv += hv * wv;
            }
        }
    }
    for j in 0..hid {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hid + j]);
        let gg = z[2 * hid + j].tanh();
        let o = sigmoid(z[3 * hid + j]);
        z[j] = i;
        z[hid + j] = f;
        z[2 * hid + j] = gg;
        z[3 * hid + j] = o;
        c[j] = f * c_prev[j] + i * gg;
        h[j] = o * c[j].tanh();
    }
}

/// Unidirectional LSTM over a `[T, In]` sequence from a zero state, optionally
/// running right-to-left. Output `[T, H]` is indexed by input time.
struct Lstm {
    reverse: bool,
    gates: Vec<f64>,
    cells: Vec<f64>,
}

impl Lstm {
    fn order(&self, t_len: usize) -> Vec<usize> {
        if self.reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        }
    }
}

impl Op for Lstm {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (inp, w_ih, w_hh, b) = (x[0], x[1], x[2], x[3]);
        if inp.rank() != 2 || w_hh.rank() != 2 {
            return Err(Error::shape("lstm", format!("input {:?}, w_hh {:?}", inp.shape(), w_hh.shape())));
        }
        let (t_len, n_in) = (inp.shape()[0], inp.shape()[1]);
        let hid = w_hh.shape()[0];
        let four = 4 * hid;
        if w_hh.shape()[1] != four || w_ih.shape() != [n_in, four] || b.shape() != [four] {
            return Err(Error::shape(
                "lstm",
                format!("input {:?}, w_ih {:?}, w_hh {:?}, b {:?}", inp.shape(), w_ih.shape(), w_hh.shape(), b.shape()),
            ));
        }
        let mut gates = vec![0.0; t_len * four];
        for row in gates.chunks_mut(four) {
            row.copy_from_slice(b.data());
        }
        gemm(t_len, n_in, four, inp.data(), false, w_ih.data(), false, &mut gates, 1.0);
        let mut hs = vec![0.0; t_len * hid];
        let mut cs = vec![0.0; t_len * hid];
        let zero = vec![0.0; hid];
        let mut prev: Option<usize> = None;
        for t in self.order(t_len) {
            let (h_prev, c_prev) = match prev {
                Some(p) => (hs[p * hid..(p + 1) * hid].to_vec(), cs[p * hid..(p + 1) * hid].to_vec()),
                None => (zero.clone(), zero.clone()),
            };
            let mut h = vec![0.0; hid];
            let mut c = vec![0.0; hid];
            lstm_cell(&mut gates[t * four..(t + 1) * four], &h_prev, &c_prev, w_hh.data(), &mut h, &mut c);
            hs[t * hid..(t + 1) * hid].copy_from_slice(&h);
            cs[t * hid..(t + 1) * hid].copy_from_slice(&c);
            prev = Some(t);
        }
        self.gates = gates;
        self.cells = cs;
        Tensor::new(&[t_len, hid], hs)
    }

    fn backward(&self, x: &[&Tensor], y: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (inp, w_ih, w_hh) = (x[0], x[1], x[2]);
        let (t_len, n_in) = (inp.shape()[0], inp.shape()[1]);
        let hid = w_hh.shape()[0];
        let four = 4 * hid;
        let hs = y.data();
        let mut dz = vec![0.0; t_len * four];
        // h_{t-1} in processing order, laid out by input time (zeros for the first step).
        let mut h_prev_mat = vec![0.0; t_len * hid];
        let order = self.order(t_len);
        for w in order.windows(2) {
            h_prev_mat[w[1] * hid..(w[1] + 1) * hid].copy_from_slice(&hs[w[0] * hid..(w[0] + 1) * hid]);
        }
        let mut dh_next = vec![0.0; hid];
        let mut dc_next = vec![0.0; hid];
        for (s, &t) in order.iter().enumerate().rev() {
            let gt = &self.gates[t * four..(t + 1) * four];
            let ct = &self.cells[t * hid..(t + 1) * hid];
            let c_prev: Vec<f64> = if s == 0 {
                vec![0.0; hid]
            } else {
                let p = order[s - 1];
                self.cells[p * hid..(p + 1) * hid].to_vec()
            };
            let dzt = &mut dz[t * four..(t + 1) * four];
            for j in 0..hid {
                let (i, f, gg, o) = (gt[j], gt[hid + j], gt[2 * hid + j], gt[3 * hid + j]);
                let tc = ct[j].tanh();
                let dh = g.data()[t * hid + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dzt[j] = dc * gg * i * (1.0 - i);
                dzt[hid + j] = dc * c_prev[j] * f * (1.0 - f);
                dzt[2 * hid + j] = dc * i * (1.0 - gg * gg);
                dzt[3 * hid + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            // dh_prev = dz_t · w_hhᵀ
            for (j, dhn) in dh_next.iter_mut().enumerate() {
                let row = &w_hh.data()[j * four..(j + 1) * four];
                *dhn = row.iter().zip(dzt.iter()).map(|(a, b)| a * b).sum();
            }
        }
        let dx = need[0].then(|| {
            let mut d = vec![0.0; t_len * n_in];
            gemm(t_len, four, n_in, &dz, false, w_ih.data(), true, &mut d, 0.0);
            Tensor::new(&[t_len, n_in], d).expect("shape")
        });
        let dw_ih = need[1].then(|| {
            let mut d = vec![0.0; n_in * four];
            gemm(n_in, t_len, four, inp.data(), true, &dz, false, &mut d, 0.0);
            Tensor::new(&[n_in, four], d).expect("shape")
        });
        let dw_hh = need[2].then(|| {
            let mut d = vec![0.0; hid * four];
            gemm(hid, t_len, four, &h_prev_mat, true, &dz, false, &mut d, 0.0);
            Tensor::new(&[hid, four], d).expect("shape")
        });
        let db = need[3].then(|| {
            let mut d = vec![0.0; four];
            for row in dz.chunks(four) {
                for (o, v) in d.iter_mut().zip(row) {
                    *o += v;
                }
            }
            Tensor::new(&[four], d).expect("shape")
        });
        Ok(vec![dx, dw_ih, dw_hh, db])
    }
}

/// Row lookup `table[ids[i]]`.
struct Embedding {
    ids: Vec<usize>,
}
impl Op for Embedding {
    fn name(&self) -> &'static str {
        "embedding"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let table = x[0];
        if table.rank() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", table.shape())));
        }
        let (v, e) = (table.shape()[0], table.shape()[1]);
        let mut data = Vec::with_capacity(self.ids.len() * e);
        for &id in &self.ids {
            if id >= v {
                return Err(Error::shape("embedding", format!("id {id} out of range {v}")));
            }
            data.extend_from_slice(&table.data()[id * e..(id + 1) * e]);
        }
        Tensor::new(&[self.ids.len(), e], data)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let e = x[0].shape()[1];
        let mut d = Tensor::zeros(x[0].shape());
        for (r, &id) in self.ids.iter().enumerate() {
            for (o, v) in d.data_mut()[id * e..(id + 1) * e].iter_mut().zip(&g.data()[r * e..(r + 1) * e]) {
                *o += v;
            }
        }
        Ok(vec![Some(d)])
    }
}

/// Broadcast sum `enc[t] + dec[u]`: `[T, J] x [U1, J] -> [T, U1, J]`.
struct JointAdd;
impl Op for JointAdd {
    fn name(&self) -> &'static str {
        "joint_add"
    }
    fn forward(&mut self, x: &[&Tensor]) -> Result<Tensor> {
        let (enc, dec) = (x[0], x[1]);
        if enc.rank() != 2 || dec.rank() != 2 || enc.shape()[1] != dec.shape()[1] {
            return Err(Error::shape("joint_add", format!("{:?} + {:?}", enc.shape(), dec.shape())));
        }
        let (t_len, j) = (enc.shape()[0], enc.shape()[1]);
        let u1 = dec.shape()[0];
        let mut out = Vec::with_capacity(t_len * u1 * j);
        for t in 0..t_len {
            let er = &enc.data()[t * j..(t + 1) * j];
            for u in 0..u1 {
                let dr = &dec.data()[u * j..(u + 1) * j];
                out.extend(er.iter().zip(dr).map(|(a, b)| a + b));
            }
        }
        Tensor::new(&[t_len, u1, j], out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (t_len, j) = (x[0].shape()[0], x[0].shape()[1]);
        let u1 = x[1].shape()[0];
        let mut de = Tensor::zeros(x[0].shape());
        let mut dd = Tensor::zeros(x[1].shape());
        for t in 0..t_len {
            for u in 0..u1 {
                let gr = &g.data()[(t * u1 + u) * j..(t * u1 + u + 1) * j];
                for k in 0..j {
                    de.data_mut()[t * j + k] += gr[k];
                    dd.data_mut()[u * j + k] += gr[k];
                }
            }
        }
        Ok(vec![need[0].then_some(de), need[1].then_some(dd)])
    }
}

impl Graph {
    /// 3D convolution, `x: [T,H,W,Cin]`, `w: [kt*kh*kw*Cin, Cout]`, `b: [Cout]`.
    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, geom: ConvGeometry) -> Result<NodeId> {
        self.apply(Conv3d { geom, cols: Vec::new() }, &[x, w, b])
    }

    /// Same-padded stride-1 temporal convolution, `x: [T, Cin]`, `w: [k*Cin, Cout]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, kernel: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("conv1d", format!("input must be [T, C], got {s:?}")));
        }
        let x4 = self.reshape(x, &[s[0], 1, 1, s[1]])?;
        let geom = ConvGeometry {
            kernel: [kernel, 1, 1],
            stride: [1, 1],
        };
        let y = self.conv3d(x4, w, b, geom)?;
        let cout = self.shape(y)[3];
        self.reshape(y, &[s[0], cout])
    }

    pub fn spatial_mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(SpatialMean, &[x])
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(
            LayerNorm {
                xhat: Vec::new(),
                inv_std: Vec::new(),
            },
            &[x, gain, bias],
        )
    }

    pub fn lstm(&mut self, x: NodeId, w_ih: NodeId, w_hh: NodeId, b: NodeId, reverse: bool) -> Result<NodeId> {
        self.apply(
            Lstm {
                reverse,
                gates: Vec::new(),
                cells: Vec::new(),
            },
            &[x, w_ih, w_hh, b],
        )
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.apply(Embedding { ids: ids.to_vec() }, &[table])
    }

    pub fn joint_add(&mut self, enc: NodeId, dec: NodeId) -> Result<NodeId> {
        self.apply(JointAdd, &[enc, dec])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_geometry() {
        let g = ConvGeometry {
            kernel: [3, 3, 3],
            stride: [2, 2],
        };
        assert_eq!(g.out_hw(32, 32), (16, 16));
        assert_eq!(g.out_hw(8, 8), (4, 4));
        assert_eq!(g.out_hw(7, 7), (4, 4));
    }

    #[test]
    fn conv3d_rejects_tiny_input() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 2, 2, 1]));
        let w = g.input(Tensor::zeros(&[27, 1]));
        let b = g.input(Tensor::zeros(&[1]));
        let geom = ConvGeometry {
            kernel: [3, 3, 3],
            stride: [1, 1],
        };
        assert!(g.conv3d(x, w, b, geom).is_err());
    }

    #[test]
    fn conv1d_same_padding_sums_neighbours() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.input(Tensor::full(&[3, 1], 1.0));
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.conv1d(x, w, b, 3).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let gain = g.input(Tensor::full(&[4], 1.0));
        let bias = g.input(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        let v = g.value(y).data();
        assert!(v.iter().sum::<f64>().abs() < 1e-12);
        assert!((v.iter().map(|a| a * a).sum::<f64>() / 4.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn joint_add_broadcasts() {
        let mut g = Graph::new();
        let e = g.input(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap());
        let d = g.input(Tensor::new(&[3, 1], vec![10.0, 20.0, 30.0]).unwrap());
        let j = g.joint_add(e, d).unwrap();
        assert_eq!(g.value(j).data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
    }
}
