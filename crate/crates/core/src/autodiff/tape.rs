use std::borrow::Cow;
use std::collections::HashSet;

use super::tensor::{ParamId, ParamKey, ParamStore, Tensor};
use super::Float;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// Elementwise minimum; ties route the gradient to the left operand.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryOp {
    Relu,
    Tanh,
    Exp,
    Log,
    Negate,
    Scale(f64),
    AddConst(f64),
    Clamp(f64, f64),
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Unfolds sample `b` of `x` into a (C·kh·kw)×(Ho·Wo) matrix.
    fn im2col<T: Float>(&self, x: &[T], b: usize, cols: &mut [T]) {
        let plane = self.out_plane();
        let base = &x[b * self.in_plane()..(b + 1) * self.in_plane()];
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let src_row =
                            &base[(c * self.height + oy * self.stride + i) * self.width..];
                        let d = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src_row[ox * self.stride + j];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters column gradients into `dx`.
    fn col2im<T: Float>(&self, cols: &[T], b: usize, dx: &mut [T]) {
        let plane = self.out_plane();
        let in_plane = self.in_plane();
        let base = &mut dx[b * in_plane..(b + 1) * in_plane];
        for c in 0..self.channels {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.out_h {
                        let off = (c * self.height + oy * self.stride + i) * self.width;
                        for ox in 0..self.out_w {
                            base[off + ox * self.stride + j] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamKey>,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        kind: BinaryOp,
        a: usize,
        b: usize,
    },
    Unary {
        kind: UnaryOp,
        x: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        d: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaxOver {
        x: usize,
        n: usize,
        d: usize,
        argmax: Vec<usize>,
    },
    Conv2d {
        x: usize,
        k: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    Reshape {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    SumLast {
        x: usize,
        d: usize,
    },
    Concat {
        parts: Vec<(usize, usize)>,
    },
    Slice {
        x: usize,
        start: usize,
        len: usize,
        d: usize,
    },
}

#[derive(Debug)]
struct Node<'p, T: Float> {
    value: Cow<'p, [T]>,
    shape: Vec<usize>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of a forward computation. Parameters are borrowed from
/// their stores for the lifetime `'p`, so a tape must be dropped before the
/// stores it read from are updated.
#[derive(Debug)]
pub struct Tape<'p, T: Float> {
    nodes: Vec<Node<'p, T>>,
    frozen: HashSet<u64>,
}

impl<T: Float> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'p, T: Float> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            frozen: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters of `store` read after this call enter the tape as constants.
    pub fn freeze(&mut self, store: &ParamStore<T>) {
        self.frozen.insert(store.uid());
    }

    fn push(&mut self, value: Cow<'p, [T]>, shape: Vec<usize>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: usize) -> bool {
        self.nodes[v].tracked
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("consistent node")
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Tensor::new(shape, data).map(|t| self.input(&t, false))
    }

    /// Records `t` as a leaf; `track` decides whether its gradient is kept.
    pub fn input(&mut self, t: &Tensor<T>, track: bool) -> Var {
        self.push(
            Cow::Owned(t.data().to_vec()),
            t.shape().to_vec(),
            Op::Leaf { param: None },
            track,
        )
    }

    /// Records a parameter. It is borrowed, not copied.
    pub fn param(&mut self, store: &'p ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let track = !self.frozen.contains(&store.uid());
        self.push(
            Cow::Borrowed(t.data()),
            t.shape().to_vec(),
            Op::Leaf {
                param: Some(store.key(id)),
            },
            track,
        )
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (value, shape) = (node.value.to_vec(), node.shape.clone());
        self.push(Cow::Owned(value), shape, Op::Leaf { param: None }, false)
    }

    /// Matrix product of an m×k and a k×n operand.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, T::zero());
        let tracked = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(
            Cow::Owned(out),
            vec![m, n],
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            tracked,
        ))
    }

    fn broadcast_shape(sa: &[usize], sb: &[usize]) -> Option<Vec<usize>> {
        let (na, nb) = (numel(sa), numel(sb));
        if sa == sb || nb == 1 || (sb.len() <= sa.len() && sa.ends_with(sb)) {
            Some(sa.to_vec())
        } else if na == 1 || (sa.len() <= sb.len() && sb.ends_with(sa)) {
            Some(sb.to_vec())
        } else {
            None
        }
    }

    /// Elementwise binary op. The smaller operand may be broadcast when its
    /// shape equals the trailing dimensions of the larger one (or it is a
    /// single value).
    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let shape = Self::broadcast_shape(self.shape(a), self.shape(b)).ok_or_else(|| {
            Error::dim(format!(
                "cannot broadcast {:?} with {:?}",
                self.shape(a),
                self.shape(b)
            ))
        })?;
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = (va.len(), vb.len());
        let out: Vec<T> = (0..numel(&shape))
            .map(|i| {
                let (x, y) = (va[i % na], vb[i % nb]);
                match kind {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => x / y,
                    BinaryOp::Min => {
                        if x <= y {
                            x
                        } else {
                            y
                        }
                    }
                }
            })
            .collect();
        let tracked = self.tracked(a.0) || self.tracked(b.0);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::Binary {
                kind,
                a: a.0,
                b: b.0,
            },
            tracked,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Min, a, b)
    }

    pub fn unary(&mut self, kind: UnaryOp, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if kind == UnaryOp::Log {
            if let Some(bad) = vx.iter().find(|&&v| v <= T::zero() || v.is_nan()) {
                return Err(Error::Domain(format!("log of nonpositive value {bad}")));
            }
        }
        let out: Vec<T> = match kind {
            UnaryOp::Relu => vx.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            UnaryOp::Tanh => vx.iter().map(|v| v.tanh()).collect(),
            UnaryOp::Exp => vx.iter().map(|v| v.exp()).collect(),
            UnaryOp::Log => vx.iter().map(|v| v.ln()).collect(),
            UnaryOp::Negate => vx.iter().map(|&v| -v).collect(),
            UnaryOp::Scale(c) => {
                let c = T::of(c);
                vx.iter().map(|&v| v * c).collect()
            }
            UnaryOp::AddConst(c) => {
                let c = T::of(c);
                vx.iter().map(|&v| v + c).collect()
            }
            UnaryOp::Clamp(lo, hi) => {
                let (lo, hi) = (T::of(lo), T::of(hi));
                vx.iter().map(|&v| v.max(lo).min(hi)).collect()
            }
        };
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x.0);
        Ok(self.push(Cow::Owned(out), shape, Op::Unary { kind, x: x.0 }, tracked))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Negate, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::Scale(c), x)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::AddConst(c), x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryOp::Clamp(lo, hi), x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::dim("layer norm of a rank-0 value"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim(format!(
                "layer norm over width {d} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Domain(format!("layer norm eps must be positive, got {eps}")));
        }
        let eps = T::of(eps);
        let dt = T::of(d as f64);
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let rows = vx.len() / d;
        let mut xhat = vec![T::zero(); vx.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); vx.len()];
        for r in 0..rows {
            let row = &vx[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * vg[j] + vb[j];
            }
        }
        let tracked = self.tracked(x.0) || self.tracked(gain.0) || self.tracked(bias.0);
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                d,
                xhat,
                inv_std,
            },
            tracked,
        ))
    }

    /// Maximum over the second-to-last axis of a `[..., N, d]` value.
    /// Returns the `[..., d]` maxima and, per output element, the winning
    /// index along N. Ties go to the lowest index.
    pub fn max_over_points(&mut self, x: Var) -> Result<(Var, Vec<usize>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim(format!("max over points needs rank ≥ 2, got {shape:?}")));
        }
        let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if n == 0 {
            return Err(Error::Domain("max over an empty point axis".into()));
        }
        let vx = self.value(x);
        let outer = vx.len() / (n * d);
        let mut out = Vec::with_capacity(outer * d);
        let mut argmax = Vec::with_capacity(outer * d);
        for o in 0..outer {
            let block = &vx[o * n * d..(o + 1) * n * d];
            for j in 0..d {
                let mut best = block[j];
                let mut idx = 0;
                for p in 1..n {
                    let v = block[p * d + j];
                    if v > best {
                        best = v;
                        idx = p;
                    }
                }
                out.push(best);
                argmax.push(idx);
            }
        }
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.push(d);
        let tracked = self.tracked(x.0);
        let v = self.push(
            Cow::Owned(out),
            out_shape,
            Op::MaxOver {
                x: x.0,
                n,
                d,
                argmax: argmax.clone(),
            },
            tracked,
        );
        Ok((v, argmax))
    }

    /// Valid (unpadded) 2-D convolution of `[B, C, H, W]` by `[F, C, kh, kw]`
    /// kernels, with an optional per-filter bias.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernels));
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] {
            return Err(Error::dim(format!("conv2d of input {sx:?} with kernels {sk:?}")));
        }
        if stride == 0 {
            return Err(Error::Domain("conv2d stride must be positive".into()));
        }
        let (batch, channels, height, width) = (sx[0], sx[1], sx[2], sx[3]);
        let (filters, kh, kw) = (sk[0], sk[2], sk[3]);
        if height < kh || width < kw {
            return Err(Error::dim(format!(
                "conv2d input {height}×{width} is smaller than the {kh}×{kw} kernel"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [filters] {
                return Err(Error::dim(format!(
                    "conv2d bias {:?} for {filters} filters",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            batch,
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            stride,
            out_h: (height - kh) / stride + 1,
            out_w: (width - kw) / stride + 1,
        };
        let plane = geom.out_plane();
        let patch = geom.patch();
        let mut cols = vec![T::zero(); patch * plane];
        let mut out = vec![T::zero(); batch * filters * plane];
        let (vx, vk) = (self.value(x), self.value(kernels));
        let vb = bias.map(|b| self.value(b));
        for b in 0..batch {
            geom.im2col(vx, b, &mut cols);
            let dst = &mut out[b * filters * plane..(b + 1) * filters * plane];
            if let Some(vb) = vb {
                for f in 0..filters {
                    dst[f * plane..(f + 1) * plane].fill(vb[f]);
                }
            }
            T::gemm(filters, patch, plane, vk, false, &cols, false, dst, T::one());
        }
        let tracked = self.tracked(x.0)
            || self.tracked(kernels.0)
            || bias.is_some_and(|b| self.tracked(b.0));
        Ok(self.push(
            Cow::Owned(out),
            vec![batch, filters, geom.out_h, geom.out_w],
            Op::Conv2d {
                x: x.0,
                k: kernels.0,
                bias: bias.map(|b| b.0),
                geom,
            },
            tracked,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        let tracked = self.tracked(x.0);
        Ok(self.push(Cow::Owned(value), shape.to_vec(), Op::Reshape { x: x.0 }, tracked))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum::<T>();
        let tracked = self.tracked(x.0);
        Ok(self.push(Cow::Owned(vec![s]), vec![1], Op::Sum { x: x.0 }, tracked))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.iter().copied().sum::<T>() / T::of(vx.len() as f64);
        let tracked = self.tracked(x.0);
        Ok(self.push(Cow::Owned(vec![s]), vec![1], Op::Mean { x: x.0 }, tracked))
    }

    /// Sums over the last axis: `[..., d]` → `[...]` (`[1]` for a vector).
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("sum over last axis of rank 0"))?;
        let out: Vec<T> = self
            .value(x)
            .chunks(d)
            .map(|row| row.iter().copied().sum())
            .collect();
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let tracked = self.tracked(x.0);
        Ok(self.push(Cow::Owned(out), out_shape, Op::SumLast { x: x.0, d }, tracked))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        for p in parts {
            let s = self.shape(*p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::dim(format!(
                    "concat of {:?} with {s:?}",
                    self.shape(*first)
                )));
            }
        }
        let rows = numel(lead);
        let widths: Vec<usize> = parts.iter().map(|p| *self.shape(*p).last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let tracked = parts.iter().any(|p| self.tracked(p.0));
        Ok(self.push(
            Cow::Owned(out),
            shape,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).zip(widths).collect(),
            },
            tracked,
        ))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("slice of rank 0"))?;
        if len == 0 || start + len > d {
            return Err(Error::dim(format!("slice {start}..{} of width {d}", start + len)));
        }
        let out: Vec<T> = self
            .value(x)
            .chunks(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = len;
        let tracked = self.tracked(x.0);
        Ok(self.push(
            Cow::Owned(out),
            out_shape,
            Op::Slice {
                x: x.0,
                start,
                len,
                d,
            },
            tracked,
        ))
    }

    /// Reverse pass from a single-valued output with upstream gradient 1.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.value(out).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        self.backward_with(out, &[T::one()])
    }

    /// Reverse pass seeded with `upstream` at `out`. Nodes are visited in
    /// exact reverse recording order.
    pub fn backward_with(&self, out: Var, upstream: &[T]) -> Result<Gradients<T>> {
        if upstream.len() != self.value(out).len() {
            return Err(Error::dim(format!(
                "upstream gradient of length {} for output of shape {:?}",
                upstream.len(),
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[out.0].tracked {
            grads[out.0] = Some(upstream.to_vec());
        }
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(key) } if n.tracked => Some((key, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let zero = T::zero();
        match &node.op {
            Op::Leaf { .. } => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.tracked(a) {
                    let ga = slot(grads, a, m * k);
                    T::gemm(m, n, k, g, false, &self.nodes[b].value, true, ga, T::one());
                }
                if self.tracked(b) {
                    let gb = slot(grads, b, k * n);
                    T::gemm(k, m, n, &self.nodes[a].value, true, g, false, gb, T::one());
                }
            }
            &Op::Binary { kind, a, b } => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let (na, nb) = (va.len(), vb.len());
                if self.tracked(a) {
                    let ga = slot(grads, a, na);
                    for (idx, &gi) in g.iter().enumerate() {
                        let (x, y) = (va[idx % na], vb[idx % nb]);
                        ga[idx % na] += match kind {
                            BinaryOp::Add | BinaryOp::Sub => gi,
                            BinaryOp::Mul => gi * y,
                            BinaryOp::Div => gi / y,
                            BinaryOp::Min => {
                                if x <= y {
                                    gi
                                } else {
                                    zero
                                }
                            }
                        };
                    }
                }
                if self.tracked(b) {
                    let gb = slot(grads, b, nb);
                    for (idx, &gi) in g.iter().enumerate() {
                        let (x, y) = (va[idx % na], vb[idx % nb]);
                        gb[idx % nb] += match kind {
                            BinaryOp::Add => gi,
                            BinaryOp::Sub => -gi,
                            BinaryOp::Mul => gi * x,
                            BinaryOp::Div => -gi * x / (y * y),
                            BinaryOp::Min => {
                                if x <= y {
                                    zero
                                } else {
                                    gi
                                }
                            }
                        };
                    }
                }
            }
            &Op::Unary { kind, x } => {
                if !self.tracked(x) {
                    return;
                }
                let vx = &self.nodes[x].value;
                let vy = &node.value;
                let gx = slot(grads, x, vx.len());
                match kind {
                    UnaryOp::Relu => {
                        for j in 0..g.len() {
                            if vx[j] > zero {
                                gx[j] += g[j];
                            }
                        }
                    }
                    UnaryOp::Tanh => {
                        for j in 0..g.len() {
                            gx[j] += g[j] * (T::one() - vy[j] * vy[j]);
                        }
                    }
                    UnaryOp::Exp => {
                        for j in 0..g.len() {
                            gx[j] += g[j] * vy[j];
                        }
                    }
                    UnaryOp::Log => {
                        for j in 0..g.len() {
                            gx[j] += g[j] / vx[j];
                        }
                    }
                    UnaryOp::Negate => {
                        for j in 0..g.len() {
                            gx[j] -= g[j];
                        }
                    }
                    UnaryOp::Scale(c) => {
                        let c = T::of(c);
                        for j in 0..g.len() {
                            gx[j] += g[j] * c;
                        }
                    }
                    UnaryOp::AddConst(_) => {
                        for j in 0..g.len() {
                            gx[j] += g[j];
                        }
                    }
                    UnaryOp::Clamp(lo, hi) => {
                        let (lo, hi) = (T::of(lo), T::of(hi));
                        for j in 0..g.len() {
                            if vx[j] >= lo && vx[j] <= hi {
                                gx[j] += g[j];
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                d,
                xhat,
                inv_std,
            } => {
                let (x, gain, bias, d) = (*x, *gain, *bias, *d);
                let rows = g.len() / d;
                if self.tracked(gain) {
                    let gg = slot(grads, gain, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.tracked(bias) {
                    let gb = slot(grads, bias, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if self.tracked(x) {
                    let vg = &self.nodes[gain].value;
                    let dt = T::of(d as f64);
                    let gx = slot(grads, x, g.len());
                    let mut dxhat = vec![zero; d];
                    for r in 0..rows {
                        let (mut s1, mut s2) = (zero, zero);
                        for j in 0..d {
                            let v = g[r * d + j] * vg[j];
                            dxhat[j] = v;
                            s1 += v;
                            s2 += v * xhat[r * d + j];
                        }
                        let scale = inv_std[r] / dt;
                        for j in 0..d {
                            gx[r * d + j] +=
                                scale * (dt * dxhat[j] - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }
            Op::MaxOver { x, n, d, argmax } => {
                let (x, n, d) = (*x, *n, *d);
                if self.tracked(x) {
                    let gx = slot(grads, x, self.nodes[x].value.len());
                    for (idx, (&gi, &p)) in g.iter().zip(argmax).enumerate() {
                        let (o, j) = (idx / d, idx % d);
                        gx[o * n * d + p * d + j] += gi;
                    }
                }
            }
            &Op::Conv2d { x, k, bias, geom } => {
                let plane = geom.out_plane();
                let patch = geom.patch();
                let fp = geom.filters * plane;
                if let Some(b) = bias.filter(|&b| self.tracked(b)) {
                    let gb = slot(grads, b, geom.filters);
                    for bi in 0..geom.batch {
                        for f in 0..geom.filters {
                            let s = &g[bi * fp + f * plane..bi * fp + (f + 1) * plane];
                            gb[f] += s.iter().copied().sum::<T>();
                        }
                    }
                }
                let (track_x, track_k) = (self.tracked(x), self.tracked(k));
                if !(track_x || track_k) {
                    return;
                }
                let vx = &self.nodes[x].value;
                let vk = &self.nodes[k].value;
                let mut cols = vec![zero; patch * plane];
                let mut dcols = vec![zero; patch * plane];
                if track_k {
                    let gk = slot(grads, k, geom.filters * patch);
                    for bi in 0..geom.batch {
                        geom.im2col(vx, bi, &mut cols);
                        let gs = &g[bi * fp..(bi + 1) * fp];
                        T::gemm(geom.filters, plane, patch, gs, false, &cols, true, gk, T::one());
                    }
                }
                if track_x {
                    let gx = slot(grads, x, vx.len());
                    for bi in 0..geom.batch {
                        let gs = &g[bi * fp..(bi + 1) * fp];
                        T::gemm(patch, geom.filters, plane, vk, true, gs, false, &mut dcols, zero);
                        geom.col2im(&dcols, bi, gx);
                    }
                }
            }
            &Op::Reshape { x } => {
                if self.tracked(x) {
                    let gx = slot(grads, x, g.len());
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
            &Op::Sum { x } => {
                if self.tracked(x) {
                    let len = self.nodes[x].value.len();
                    slot(grads, x, len).iter_mut().for_each(|a| *a += g[0]);
                }
            }
            &Op::Mean { x } => {
                if self.tracked(x) {
                    let len = self.nodes[x].value.len();
                    let s = g[0] / T::of(len as f64);
                    slot(grads, x, len).iter_mut().for_each(|a| *a += s);
                }
            }
            &Op::SumLast { x, d } => {
                if self.tracked(x) {
                    let gx = slot(grads, x, g.len() * d);
                    for (r, &gi) in g.iter().enumerate() {
                        gx[r * d..(r + 1) * d].iter_mut().for_each(|a| *a += gi);
                    }
                }
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut off = 0;
                for &(p, w) in parts {
                    if self.tracked(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            &Op::Slice { x, start, len, d } => {
                if self.tracked(x) {
                    let rows = g.len() / len;
                    let gx = slot(grads, x, rows * d);
                    for r in 0..rows {
                        for j in 0..len {
                            gx[r * d + start + j] += g[r * len + j];
                        }
                    }
                }
            }
        }
    }
}

fn slot<T: Float>(grads: &mut [Option<Vec<T>>], i: usize, len: usize) -> &mut [T] {
    grads[i].get_or_insert_with(|| vec![T::zero(); len])
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamKey, usize)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the output with respect to `v`, if `v` was tracked and
    /// reached.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of the given length when unreached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

impl<T: Float> Gradients<T> {
    /// Per-parameter gradients for `store`, indexed like the store. Several
    /// reads of one parameter are summed; unread parameters are `None`.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Option<Vec<T>>> {
        let mut out: Vec<Option<Vec<T>>> = vec![None; store.len()];
        for &(key, node) in &self.params {
            if key.store != store.uid() {
                continue;
            }
            let len = store.get(ParamId(key.index)).numel();
            let acc = out[key.index].get_or_insert_with(|| vec![T::zero(); len]);
            if let Some(g) = &self.grads[node] {
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
        out
    }
}

impl<T: Float> ParamStore<T> {
    /// Adds every gradient recorded for this store's parameters into their
    /// `grad` fields.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        let uid = self.uid();
        for &(key, node) in &grads.params {
            if key.store != uid {
                continue;
            }
            if let Some(g) = &grads.grads[node] {
                self.get_mut(ParamId(key.index)).accumulate_grad(g);
            }
        }
    }
}
