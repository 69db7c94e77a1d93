//! Video synchronization and the 3D convolutional visual frontend.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustic::FRAME_HOP_SECS;
use crate::autodiff::{ConvGeometry, Graph, NodeId, ParamStore, Tensor};
use crate::binio;
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
const VIDEO_MAGIC: &[u8; 4] = b"AVTV";

/// Raw face track: `T_v x H x W x 3` values in `[-1, 1]` at `fps`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTrack {
    frames: Vec<f32>,
    num_frames: usize,
    height: usize,
    width: usize,
    fps: f64,
}

impl VideoTrack {
    pub fn new(frames: Vec<f32>, num_frames: usize, height: usize, width: usize, fps: f64) -> Result<Self> {
        if frames.len() != num_frames * height * width * CHANNELS {
            return Err(Error::shape(
                "video_track",
                format!("{} values for {num_frames}x{height}x{width}x3", frames.len()),
            ));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        if let Some(v) = frames.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self {
            frames,
            num_frames,
            height,
            width,
            fps,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn duration_secs(&self) -> f64 {
        self.num_frames as f64 / self.fps
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }

    /// Repeats the track from its start until it holds `num_frames` frames
    /// (or truncates it).
    pub fn looped_to(&self, num_frames: usize) -> Result<VideoTrack> {
        if self.num_frames == 0 {
            return Err(Error::Invalid("empty video".into()));
        }
        let mut frames = Vec::with_capacity(num_frames * self.frame_len());
        for i in 0..num_frames {
            frames.extend_from_slice(self.frame(i % self.num_frames));
        }
        VideoTrack::new(frames, num_frames, self.height, self.width, self.fps)
    }
}

/// Video resampled onto the acoustic frame grid: `T x H x W x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncedVideo {
    frames: Vec<f32>,
    num_frames: usize,
    height: usize,
    width: usize,
}

impl SyncedVideo {
    pub fn new(frames: Vec<f32>, num_frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames.len() != num_frames * height * width * CHANNELS {
            return Err(Error::shape(
                "synced_video",
                format!("{} values for {num_frames}x{height}x{width}x3", frames.len()),
            ));
        }
        Ok(Self {
            frames,
            num_frames,
            height,
            width,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width * CHANNELS;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(&[self.num_frames, self.height, self.width, CHANNELS], &self.frames).expect("shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        binio::encode_array(
            VIDEO_MAGIC,
            &[self.num_frames, self.height, self.width, CHANNELS],
            &self.frames,
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (dims, data) = binio::read_array(path, VIDEO_MAGIC)?;
        if dims.len() != 4 || dims[3] != CHANNELS {
            return Err(Error::Data(format!("{}: video dims {dims:?}", path.display())));
        }
        Self::new(data, dims[0], dims[1], dims[2])
    }
}

/// Source frame index for output frame `t`: `round(t * hop * fps)` clamped to
/// the last source frame.
pub fn source_index(t: usize, hop_secs: f64, fps: f64, num_source: usize) -> usize {
    let idx = (t as f64 * hop_secs * fps).round() as usize;
    idx.min(num_source - 1)
}

/// Nearest-neighbour resampling in time onto `frames` output frames.
pub fn resample_to_frames(v: &VideoTrack, frames: usize, hop_secs: f64) -> Result<SyncedVideo> {
    if v.num_frames() == 0 {
        return Err(Error::Invalid("empty video".into()));
    }
    if frames == 0 {
        return Err(Error::Invalid("target frame count must be >= 1".into()));
    }
    let mut data = Vec::with_capacity(frames * v.frame_len());
    for t in 0..frames {
        data.extend_from_slice(v.frame(source_index(t, hop_secs, v.fps(), v.num_frames())));
    }
    SyncedVideo::new(data, frames, v.height(), v.width())
}

/// Resampling at the 30 ms acoustic frame hop.
pub fn sync_to_acoustic(v: &VideoTrack, frames: usize) -> Result<SyncedVideo> {
    resample_to_frames(v, frames, FRAME_HOP_SECS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dLayer {
    pub out_channels: usize,
    /// `[time, height, width]`; time is always same-padded with stride 1.
    pub kernel: [usize; 3],
    /// Spatial `[height, width]` stride.
    pub stride: [usize; 2],
}

/// Layer plan of the visual frontend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<Conv3dLayer>,
    pub activation: Activation,
    /// Width of the per-frame output after pooling and projection.
    pub feature_dim: usize,
    /// When false the pooled conv features are returned without projection.
    pub project: bool,
}

impl Default for FrontendConfig {
    /// Five 3x3x3 layers with stride-2 spatial downsampling on layers 2 and 4,
    /// 32x32 input, 64-d output.
    fn default() -> Self {
        let layer = |c, s| Conv3dLayer {
            out_channels: c,
            kernel: [3, 3, 3],
            stride: [s, s],
        };
        Self {
            height: 32,
            width: 32,
            layers: vec![layer(8, 1), layer(16, 2), layer(16, 1), layer(32, 2), layer(32, 1)],
            activation: Activation::Relu,
            feature_dim: 64,
            project: true,
        }
    }
}

impl FrontendConfig {
    /// Output spatial size after each layer; errors when a layer's kernel does
    /// not fit its input.
    pub fn spatial_plan(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.height, self.width);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let [kt, kh, kw] = l.kernel;
            if kt == 0 || kt % 2 == 0 {
                return Err(Error::Config(format!("layer {i}: temporal kernel must be odd, got {kt}")));
            }
            if h < kh || w < kw || l.stride.contains(&0) {
                return Err(Error::Config(format!(
                    "layer {i}: spatial input {h}x{w} too small for kernel {kh}x{kw} / stride {:?}",
                    l.stride
                )));
            }
            let g = ConvGeometry {
                kernel: l.kernel,
                stride: l.stride,
            };
            (h, w) = g.out_hw(h, w);
            out.push((h, w));
        }
        Ok(out)
    }

    pub fn output_dim(&self) -> usize {
        if self.project {
            self.feature_dim
        } else {
            self.layers.last().map_or(CHANNELS, |l| l.out_channels)
        }
    }
}

/// `M x T x D_v` per-frame visual features.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    pub values: Tensor,
}

impl VisualFeatures {
    pub fn num_tracks(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Features of track `m`, `[T, D_v]`.
    pub fn track(&self, m: usize) -> Tensor {
        self.values.index0(m)
    }
}

/// One instance of the 3D ConvNet, owning the parameters under `prefix/`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFrontend {
    pub config: FrontendConfig,
    pub prefix: String,
}

impl VisualFrontend {
    pub fn new(config: FrontendConfig, prefix: impl Into<String>) -> Result<Self> {
        config.spatial_plan()?;
        Ok(Self {
            config,
            prefix: prefix.into(),
        })
    }

    fn name(&self, s: &str) -> String {
        format!("{}/{s}", self.prefix)
    }

    pub fn init(&self, params: &mut ParamStore, seed: u64) {
        let mut cin = CHANNELS;
        for (i, l) in self.config.layers.iter().enumerate() {
            let fan_in = l.kernel.iter().product::<usize>() * cin;
            params.init_he(seed, &self.name(&format!("conv{i}/w")), &[fan_in, l.out_channels], fan_in);
            params.init_const(&self.name(&format!("conv{i}/b")), &[l.out_channels], 0.0);
            cin = l.out_channels;
        }
        if self.config.project {
            params.init_uniform(seed, &self.name("proj/w"), &[cin, self.config.feature_dim], cin);
            params.init_const(&self.name("proj/b"), &[self.config.feature_dim], 0.0);
        }
    }

    /// Records the frontend for one synced track; returns a `[T, D_v]` node.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, video: NodeId) -> Result<NodeId> {
        let s = g.shape(video).to_vec();
        if s.len() != 4 || s[1] != self.config.height || s[2] != self.config.width || s[3] != CHANNELS {
            return Err(Error::shape(
                "visual_frontend",
                format!(
                    "expected [T, {}, {}, 3], got {s:?}",
                    self.config.height, self.config.width
                ),
            ));
        }
        let mut x = video;
        for (i, l) in self.config.layers.iter().enumerate() {
            let w = g.param(params, &self.name(&format!("conv{i}/w")))?;
            let b = g.param(params, &self.name(&format!("conv{i}/b")))?;
            let geom = ConvGeometry {
                kernel: l.kernel,
                stride: l.stride,
            };
            x = g.conv3d(x, w, b, geom)?;
            if self.config.activation == Activation::Relu {
                x = g.relu(x)?;
            }
        }
        let mut y = g.spatial_mean(x)?;
        if self.config.project {
            let w = g.param(params, &self.name("proj/w"))?;
            let b = g.param(params, &self.name("proj/b"))?;
            y = g.linear(y, w, Some(b))?;
        }
        Ok(y)
    }

    /// Inference over `M` tracks sharing a frame count.
    pub fn features(&self, params: &ParamStore, tracks: &[SyncedVideo]) -> Result<VisualFeatures> {
        let first = tracks
            .first()
            .ok_or_else(|| Error::Invalid("no tracks".into()))?;
        let mut outs = Vec::with_capacity(tracks.len());
        for t in tracks {
            if t.num_frames() != first.num_frames() {
                return Err(Error::shape(
                    "visual_features",
                    format!("track lengths {} vs {}", t.num_frames(), first.num_frames()),
                ));
            }
            let mut g = Graph::new();
            let x = g.input(t.to_tensor());
            let y = self.forward(&mut g, params, x)?;
            outs.push(g.value(y).clone());
        }
        Ok(VisualFeatures {
            values: Tensor::stack(&outs)?,
        })
    }
}
