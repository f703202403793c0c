use crate::autodiff::{Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::init::orthogonal;
use super::layers::{LayerNorm, Linear, RELU_GAIN};

/// Per-point MLP with shared weights, max-pool over points, then a linear
/// projection and layer norm. Hidden layers are `Linear → LN → relu`; the
/// last point-wise layer is plain linear.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNet {
    pub input_width: usize,
    pub point_layers: Vec<(Linear, Option<LayerNorm>)>,
    pub proj: Linear,
    pub proj_norm: LayerNorm,
    pub embed_dim: usize,
}

impl PointNet {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_width: usize,
        widths: &[usize],
        embed_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("PointNet needs at least one point-wise layer".into()));
        }
        let mut point_layers = Vec::with_capacity(widths.len());
        let mut width = input_width;
        for (i, &w) in widths.iter().enumerate() {
            let hidden = i + 1 < widths.len();
            let name = format!("{prefix}.mlp.{i}");
            let gain = if hidden { RELU_GAIN } else { 1.0 };
            let lin = Linear::new(store, &name, width, w, gain, rng)?;
            let norm = if hidden {
                Some(LayerNorm::new(store, &format!("{name}.ln"), w)?)
            } else {
                None
            };
            point_layers.push((lin, norm));
            width = w;
        }
        let proj = Linear::new(store, &format!("{prefix}.proj"), width, embed_dim, 1.0, rng)?;
        let proj_norm = LayerNorm::new(store, &format!("{prefix}.proj.ln"), embed_dim)?;
        Ok(PointNet {
            input_width,
            point_layers,
            proj,
            proj_norm,
            embed_dim,
        })
    }

    /// Width of the pooled global feature.
    pub fn pooled_width(&self) -> usize {
        self.point_layers.last().map(|(l, _)| l.outputs).unwrap_or(0)
    }

    /// Pooled `[B, W]` feature of a `[B, N, C]` batch and its argmax indices
    /// (`B·W` entries, each a point index).
    pub fn pooled<'p, T: Float>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Vec<usize>)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input_width {
            return Err(Error::dim(format!(
                "PointNet expects [B, N, {}], got {shape:?}",
                self.input_width
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        let mut h = tape.reshape(x, &[b * n, self.input_width])?;
        for (lin, norm) in &self.point_layers {
            h = lin.forward(tape, store, h)?;
            if let Some(norm) = norm {
                h = norm.forward(tape, store, h)?;
                h = tape.relu(h)?;
            }
        }
        let h = tape.reshape(h, &[b, n, self.pooled_width()])?;
        tape.max_over_points(h)
    }

    pub fn forward<'p, T: Float>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let (pooled, _) = self.pooled(tape, store, x)?;
        let e = self.proj.forward(tape, store, pooled)?;
        self.proj_norm.forward(tape, store, e)
    }

    /// Flags the points of one `[N, C]` cloud that win the max in at least one
    /// pooled dimension.
    pub fn contribution_map<T: Float>(&self, store: &ParamStore<T>, rows: &[T], n: usize) -> Result<Vec<bool>> {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, n, self.input_width], rows.to_vec())?;
        let (_, argmax) = self.pooled(&mut tape, store, x)?;
        let mut flags = vec![false; n];
        for i in argmax {
            flags[i] = true;
        }
        Ok(flags)
    }
}

/// One 3×3 convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

pub const CNN_FILTERS: usize = 32;
pub const CNN_STRIDES: [usize; 4] = [2, 1, 1, 1];

/// Four valid 3×3 convolutions (strides 2, 1, 1, 1) with relu, flatten,
/// linear projection, layer norm and tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub convs: Vec<Conv>,
    pub proj: Linear,
    pub proj_norm: LayerNorm,
    pub embed_dim: usize,
}

/// Spatial extent after the convolution stack.
pub fn cnn_output_extent(h: usize, w: usize) -> Result<(usize, usize)> {
    let (mut h, mut w) = (h, w);
    for s in CNN_STRIDES {
        if h < 3 || w < 3 {
            return Err(Error::dim(format!("image too small for the convolution stack at {h}×{w}")));
        }
        h = (h - 3) / s + 1;
        w = (w - 3) / s + 1;
    }
    Ok((h, w))
}

impl Cnn {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        height: usize,
        width: usize,
        embed_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (oh, ow) = cnn_output_extent(height, width)?;
        let mut convs = Vec::with_capacity(CNN_STRIDES.len());
        let mut cin = channels;
        for (i, &stride) in CNN_STRIDES.iter().enumerate() {
            let k = orthogonal(CNN_FILTERS, cin * 9, RELU_GAIN, rng);
            let name = format!("{prefix}.conv.{i}");
            let kernels = store.insert(
                format!("{name}.weight"),
                Tensor::from_f64(&[CNN_FILTERS, cin, 3, 3], &k)?,
            )?;
            let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[CNN_FILTERS]))?;
            convs.push(Conv { kernels, bias, stride });
            cin = CNN_FILTERS;
        }
        let flat = CNN_FILTERS * oh * ow;
        let proj = Linear::new(store, &format!("{prefix}.proj"), flat, embed_dim, 1.0, rng)?;
        let proj_norm = LayerNorm::new(store, &format!("{prefix}.proj.ln"), embed_dim)?;
        Ok(Cnn {
            channels,
            height,
            width,
            convs,
            proj,
            proj_norm,
            embed_dim,
        })
    }

    pub fn forward<'p, T: Float>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1..] != [self.channels, self.height, self.width] {
            return Err(Error::dim(format!(
                "CNN expects [B, {}, {}, {}], got {shape:?}",
                self.channels, self.height, self.width
            )));
        }
        let mut h = x;
        for conv in &self.convs {
            let k = tape.param(store, conv.kernels);
            let b = tape.param(store, conv.bias);
            h = tape.conv2d(h, k, Some(b), conv.stride)?;
            h = tape.relu(h)?;
        }
        let flat = tape.value(h).len() / shape[0];
        let h = tape.reshape(h, &[shape[0], flat])?;
        let e = self.proj.forward(tape, store, h)?;
        let e = self.proj_norm.forward(tape, store, e)?;
        tape.tanh(e)
    }
}

/// The shared visual backbone.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    PointNet(PointNet),
    Cnn(Cnn),
}

impl Encoder {
    pub fn embed_dim(&self) -> usize {
        match self {
            Encoder::PointNet(p) => p.embed_dim,
            Encoder::Cnn(c) => c.embed_dim,
        }
    }

    /// `x` is `[B, N, C]` for PointNet and `[B, C, H, W]` for the CNN.
    pub fn forward<'p, T: Float>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            Encoder::PointNet(p) => p.forward(tape, store, x),
            Encoder::Cnn(c) => c.forward(tape, store, x),
        }
    }
}
