use super::conv::{self, ConvGeom};
use super::resample::cubic_rows;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize by batch statistics and update the running state.
    Train,
    /// Normalize by the running state.
    Eval,
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNormTrain { x: Var, xhat: Vec<T>, inv_std: Vec<T> },
    ChannelScale { x: Var, scale: Vec<T> },
    Prelu { x: Var, alpha: Var },
    LeakyRelu { x: Var, slope: T },
    Relu { x: Var },
    Sigmoid { x: Var },
    LogSigmoid { x: Var },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    PixelShuffle { x: Var, r: usize },
    PixelUnshuffle { x: Var, r: usize },
    Add { a: Var, b: Var, bcast: Bcast },
    Sub { a: Var, b: Var, bcast: Bcast },
    Mul { a: Var, b: Var, bcast: Bcast },
    Scale { x: Var, s: T },
    AddScalar { x: Var },
    Concat { parts: Vec<Var> },
    Narrow { x: Var, start: usize, len: usize },
    Log { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    MseMean { a: Var, b: Var },
    BceWithLogits { x: Var, target: T },
    Bce { p: Var, target: T },
    ResizeBilinear { x: Var },
    ResizeBicubic { x: Var, rows: Vec<Vec<(usize, f64)>>, cols: Vec<Vec<(usize, f64)>> },
    AvgPool2 { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of differentiable operations.
///
/// Gradients are populated by [`Tape::backward`] for every leaf created with
/// `requires_grad`. A second `backward` call fails unless
/// [`Tape::retain_graph`] was enabled.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    retain: bool,
    consumed: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// How the right operand of a binary op maps onto the left operand's shape.
#[derive(Clone, Copy, Debug)]
struct Bcast {
    dims: [usize; 4],
    strides: [usize; 4],
    same: bool,
}

impl Bcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Self {
                dims: [0; 4],
                strides: [0; 4],
                same: true,
            });
        }
        // b expressed as 4 extents aligned with a (padded to 4 axes)
        let pad = 4 - a.len();
        let mut ad = [1usize; 4];
        ad[pad..].copy_from_slice(a);
        let mut bd = [1usize; 4];
        if b.len() == a.len() {
            bd[pad..].copy_from_slice(b);
        } else if a.len() == 4 && b.len() == 2 {
            bd[0] = b[0];
            bd[1] = b[1];
        } else if a.len() == 4 && b.len() == 1 {
            bd[1] = b[0];
        } else {
            return Err(Error::shape(op, format!("cannot broadcast {b:?} against {a:?}")));
        }
        for axis in 0..4 {
            if bd[axis] != ad[axis] && bd[axis] != 1 {
                return Err(Error::shape(
                    op,
                    format!("axis {} mismatch: {b:?} cannot broadcast against {a:?}", axis as isize - pad as isize),
                ));
            }
        }
        let mut strides = [0usize; 4];
        let mut acc = 1;
        for axis in (0..4).rev() {
            strides[axis] = if bd[axis] == 1 { 0 } else { acc };
            acc *= bd[axis];
        }
        Ok(Self {
            dims: ad,
            strides,
            same: false,
        })
    }

    /// Calls `f(a_index, b_index)` for every element of the left operand.
    fn for_each(&self, len: usize, mut f: impl FnMut(usize, usize)) {
        if self.same {
            for i in 0..len {
                f(i, i);
            }
            return;
        }
        let [d0, d1, d2, d3] = self.dims;
        let [s0, s1, s2, s3] = self.strides;
        let mut i = 0;
        for i0 in 0..d0 {
            for i1 in 0..d1 {
                for i2 in 0..d2 {
                    let base = i0 * s0 + i1 * s1 + i2 * s2;
                    for i3 in 0..d3 {
                        f(i, base + i3 * s3);
                        i += 1;
                    }
                }
            }
        }
    }
}

/// Splits a shape into (outer, channels, inner) around axis 1.
fn channel_split(shape: &[usize]) -> (usize, usize, usize) {
    let outer = shape[0];
    let c = if shape.len() > 1 { shape[1] } else { 1 };
    let inner = shape.iter().skip(2).product();
    (outer, c, inner)
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// log(sigmoid(x)) without overflow.
fn log_sigmoid<T: Element>(x: T) -> T {
    let m = if x < T::zero() { x } else { T::zero() };
    m - ((-x.abs()).exp()).ln_1p()
}

fn scalar_shape() -> Vec<usize> {
    vec![1]
}

struct BilinearTap {
    i0: usize,
    i1: usize,
    l: f64,
}

fn bilinear_taps(input: usize, output: usize) -> Vec<BilinearTap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            BilinearTap {
                i0,
                i1,
                l: src - i0 as f64,
            }
        })
        .collect()
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            retain: false,
            consumed: false,
        }
    }

    /// Allow repeated `backward` calls on the same recording.
    pub fn retain_graph(&mut self, retain: bool) {
        self.retain = retain;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// A non-differentiable copy of `v`.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to leaf `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn map_unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        let rg = self.any_grad(&[x]);
        self.push(name, out, op, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.value(x).dims4("conv2d")?;
        let ws = self.value(w).dims4("conv2d")?;
        let geom = ConvGeom::new(xs, ws, stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias axis: expected [{}], got {:?}", geom.cout, self.shape(b)),
                ));
            }
        }
        let out = conv::forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::from_parts(vec![geom.n, geom.cout, geom.ho, geom.wo], out);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push("conv2d", out, Op::Conv2d { x, w, b, geom }, rg)
    }

    /// Per-channel batch normalization without affine parameters.
    pub fn batch_norm(
        &mut self,
        x: Var,
        mode: BatchNormMode,
        running_mean: &mut [T],
        running_var: &mut [T],
        eps: T,
        momentum: T,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("batch_norm")?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("channel axis: input has {c} channels, running state has {}", running_mean.len()),
            ));
        }
        let hw = h * w;
        let m = n * hw;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        let rg = self.any_grad(&[x]);
        match mode {
            BatchNormMode::Train => {
                if m < 2 {
                    return Err(Error::shape(
                        "batch_norm",
                        "train mode needs at least two values per channel (N*H*W >= 2)",
                    ));
                }
                let mf = T::of(m as f64);
                let mut inv_std = vec![T::zero(); c];
                for ch in 0..c {
                    let mut sum = T::zero();
                    for s in 0..n {
                        sum += xd[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let mean = sum / mf;
                    let mut sq = T::zero();
                    for s in 0..n {
                        for &v in &xd[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                            sq += (v - mean) * (v - mean);
                        }
                    }
                    let var = sq / mf;
                    let is = T::one() / (var + eps).sqrt();
                    inv_std[ch] = is;
                    for s in 0..n {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            out[i] = (xd[i] - mean) * is;
                        }
                    }
                    let unbiased = sq / T::of((m - 1) as f64);
                    running_mean[ch] = (T::one() - momentum) * running_mean[ch] + momentum * mean;
                    running_var[ch] = (T::one() - momentum) * running_var[ch] + momentum * unbiased;
                }
                let xhat = out.clone();
                let out = Tensor::from_parts(vec![n, c, h, w], out);
                self.push("batch_norm", out, Op::BatchNormTrain { x, xhat, inv_std }, rg)
            }
            BatchNormMode::Eval => {
                let scale: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for i in base..base + hw {
                            out[i] = (xd[i] - running_mean[ch]) * scale[ch];
                        }
                    }
                }
                let out = Tensor::from_parts(vec![n, c, h, w], out);
                self.push("batch_norm", out, Op::ChannelScale { x, scale }, rg)
            }
        }
    }

    /// Parametric ReLU with one slope per channel (axis 1).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (outer, c, inner) = channel_split(self.shape(x));
        if self.shape(alpha) != [c] {
            return Err(Error::shape(
                "prelu",
                format!("channel axis: input has {c} channels, alpha has shape {:?}", self.shape(alpha)),
            ));
        }
        let xd = self.value(x).data();
        let ad = self.value(alpha).data();
        let mut out = Vec::with_capacity(xd.len());
        for o in 0..outer {
            for ch in 0..c {
                let a = ad[ch];
                let base = (o * c + ch) * inner;
                out.extend(xd[base..base + inner].iter().map(|&v| if v >= T::zero() { v } else { a * v }));
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        let rg = self.any_grad(&[x, alpha]);
        self.push("prelu", out, Op::Prelu { x, alpha }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::of(slope);
        self.map_unary(
            "leaky_relu",
            x,
            move |v| if v >= T::zero() { v } else { s * v },
            Op::LeakyRelu { x, slope: s },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_unary("relu", x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_unary("sigmoid", x, sigmoid, Op::Sigmoid { x })
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_unary("log_sigmoid", x, log_sigmoid, Op::LogSigmoid { x })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map_unary("log", x, |v| v.ln(), Op::Log { x })
    }

    /// [N,C,H,W] -> [N,C] spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.any_grad(&[x]);
        self.push("global_avg_pool", Tensor::from_parts(vec![n, c], out), Op::GlobalAvgPool { x }, rg)
    }

    /// `x W^T + b` for x [N,Fin], W [Fout,Fin].
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fin) = match self.shape(x) {
            &[n, f] => (n, f),
            s => return Err(Error::shape("linear", format!("input must be [N,Fin], got {s:?}"))),
        };
        let fout = match self.shape(w) {
            &[o, f] if f == fin => o,
            s => {
                return Err(Error::shape(
                    "linear",
                    format!("feature axis: input has {fin} features, weight has shape {s:?}"),
                ))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias axis: expected [{fout}], got {:?}", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bd);
            }
        }
        T::gemm(n, fin, fout, T::one(), self.value(x).data(), false, self.value(w).data(), true, T::one(), &mut out);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push("linear", Tensor::from_parts(vec![n, fout], out), Op::Linear { x, w, b }, rg)
    }

    /// [N, C*r*r, H, W] -> [N, C, rH, rW].
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, crr, h, w] = self.value(x).dims4("pixel_shuffle")?;
        if r == 0 || crr % (r * r) != 0 {
            return Err(Error::shape(
                "pixel_shuffle",
                format!("channel axis: {crr} channels not divisible by r^2 = {}", r * r),
            ));
        }
        let c = crr / (r * r);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        let (oh, ow) = (h * r, w * r);
        for s in 0..n {
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        let src_c = ch * r * r + i * r + j;
                        for y in 0..h {
                            let src = ((s * crr + src_c) * h + y) * w;
                            let dst = ((s * c + ch) * oh + y * r + i) * ow + j;
                            for xx in 0..w {
                                out[dst + xx * r] = xd[src + xx];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push("pixel_shuffle", Tensor::from_parts(vec![n, c, oh, ow], out), Op::PixelShuffle { x, r }, rg)
    }

    /// Inverse of [`Tape::pixel_shuffle`]: [N, C, rH, rW] -> [N, C*r*r, H, W].
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, c, oh, ow] = self.value(x).dims4("pixel_unshuffle")?;
        if r == 0 || oh % r != 0 || ow % r != 0 {
            return Err(Error::shape(
                "pixel_unshuffle",
                format!("height/width axes: {oh}x{ow} not divisible by r = {r}"),
            ));
        }
        let (h, w) = (oh / r, ow / r);
        let crr = c * r * r;
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        let dst_c = ch * r * r + i * r + j;
                        for y in 0..h {
                            let dst = ((s * crr + dst_c) * h + y) * w;
                            let src = ((s * c + ch) * oh + y * r + i) * ow + j;
                            for xx in 0..w {
                                out[dst + xx] = xd[src + xx * r];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push("pixel_unshuffle", Tensor::from_parts(vec![n, crr, h, w], out), Op::PixelUnshuffle { x, r }, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Bcast)> {
        let bc = Bcast::new(name, self.shape(a), self.shape(b))?;
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(ad.len());
        bc.for_each(ad.len(), |i, j| out.push(f(ad[i], bd[j])));
        Ok((Tensor::from_parts(self.shape(a).to_vec(), out), bc))
    }

    /// `a + b`; `b` may be a per-channel vector ([C] or [N,C]) or have unit axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bcast) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        self.push("add", out, Op::Add { a, b, bcast }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bcast) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        self.push("sub", out, Op::Sub { a, b, bcast }, rg)
    }

    /// `a * b` elementwise with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bcast) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        self.push("mul", out, Op::Mul { a, b, bcast }, rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        self.map_unary("scale", x, move |v| v * s, Op::Scale { x, s })
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        self.map_unary("add_scalar", x, move |v| v + s, Op::AddScalar { x })
    }

    /// Concatenation along the channel axis (axis 1).
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if base.len() < 2 {
            return Err(Error::shape("concat", "inputs need a channel axis"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::shape(
                    "concat",
                    format!("non-channel axes differ: {:?} vs {:?}", s, base),
                ));
            }
            total += s[1];
        }
        let outer = base[0];
        let inner: usize = base[2..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let c = self.shape(*p)[1];
                out.extend_from_slice(&self.value(*p).data()[o * c * inner..(o + 1) * c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = total;
        let rg = self.any_grad(parts);
        self.push(
            "concat",
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        )
    }

    /// Channels `start..start+len` along axis 1.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, c, inner) = channel_split(&shape);
        if shape.len() < 2 || start + len > c || len == 0 {
            return Err(Error::shape(
                "narrow",
                format!("channel axis: range {start}..{} outside {c} channels", start + len),
            ));
        }
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * c + start) * inner..(o * c + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[1] = len;
        let rg = self.any_grad(&[x]);
        self.push("narrow", Tensor::from_parts(oshape, out), Op::Narrow { x, start, len }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push("sum", Tensor::from_parts(scalar_shape(), vec![s]), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let s = d.iter().copied().sum::<T>() / T::of(d.len() as f64);
        let rg = self.any_grad(&[x]);
        self.push("mean", Tensor::from_parts(scalar_shape(), vec![s]), Op::Mean { x }, rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mse_mean",
                format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let s = ad.iter().zip(bd).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / T::of(ad.len() as f64);
        let rg = self.any_grad(&[a, b]);
        self.push("mse_mean", Tensor::from_parts(scalar_shape(), vec![s]), Op::MseMean { a, b }, rg)
    }

    /// Mean binary cross-entropy of logits against a constant target.
    pub fn bce_with_logits(&mut self, x: Var, target: f64) -> Result<Var> {
        let t = T::of(target);
        let d = self.value(x).data();
        let s = d
            .iter()
            .map(|&v| -(t * log_sigmoid(v) + (T::one() - t) * log_sigmoid(-v)))
            .sum::<T>()
            / T::of(d.len() as f64);
        let rg = self.any_grad(&[x]);
        self.push("bce_with_logits", Tensor::from_parts(scalar_shape(), vec![s]), Op::BceWithLogits { x, target: t }, rg)
    }

    /// Mean binary cross-entropy of probabilities against a constant target.
    pub fn bce(&mut self, p: Var, target: f64) -> Result<Var> {
        let t = T::of(target);
        let d = self.value(p).data();
        let s = d
            .iter()
            .map(|&v| -(t * v.ln() + (T::one() - t) * (T::one() - v).ln()))
            .sum::<T>()
            / T::of(d.len() as f64);
        let rg = self.any_grad(&[p]);
        self.push("bce", Tensor::from_parts(scalar_shape(), vec![s]), Op::Bce { p, target: t }, rg)
    }

    /// Bilinear resampling with half-pixel centers (no corner alignment).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("resize_bilinear")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_bilinear", "output extents must be positive"));
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for plane in xd.chunks(h * w) {
            for a in &ty {
                for b in &tx {
                    let v00 = plane[a.i0 * w + b.i0].as_f64();
                    let v01 = plane[a.i0 * w + b.i1].as_f64();
                    let v10 = plane[a.i1 * w + b.i0].as_f64();
                    let v11 = plane[a.i1 * w + b.i1].as_f64();
                    let top = v00 + (v01 - v00) * b.l;
                    let bot = v10 + (v11 - v10) * b.l;
                    out.push(T::of(top + (bot - top) * a.l));
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(
            "resize_bilinear",
            Tensor::from_parts(vec![n, c, out_h, out_w], out),
            Op::ResizeBilinear { x },
            rg,
        )
    }

    /// Separable Catmull-Rom resampling with half-pixel centers and clamped borders.
    pub fn resize_bicubic(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("resize_bicubic")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_bicubic", "output extents must be positive"));
        }
        let rows = cubic_rows(h, out_h);
        let cols = cubic_rows(w, out_w);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        let mut horiz = vec![0.0f64; h * out_w];
        for plane in xd.chunks(h * w) {
            for y in 0..h {
                for (ox, col) in cols.iter().enumerate() {
                    horiz[y * out_w + ox] = col.iter().map(|&(i, wt)| wt * plane[y * w + i].as_f64()).sum();
                }
            }
            for row in &rows {
                for ox in 0..out_w {
                    out.push(T::of(row.iter().map(|&(i, wt)| wt * horiz[i * out_w + ox]).sum()));
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(
            "resize_bicubic",
            Tensor::from_parts(vec![n, c, out_h, out_w], out),
            Op::ResizeBicubic { x, rows, cols },
            rg,
        )
    }

    /// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("avg_pool2")?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape("avg_pool2", format!("height/width axes: {h}x{w} too small to pool")));
        }
        let quarter = T::of(0.25);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in xd.chunks(h * w) {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
                }
            }
        }
        let rg = self.any_grad(&[x]);
        self.push("avg_pool2", Tensor::from_parts(vec![n, c, oh, ow], out), Op::AvgPool2 { x }, rg)
    }

    /// Reverse pass from a scalar `loss`, populating leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward(
                "backward already ran on this tape; enable retain_graph to run it again".into(),
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::Backward("tape is empty".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, g.data(), &mut grads);
        }
        self.grads = grads;
        if !self.retain {
            self.consumed = true;
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let val = |v: Var| nodes[v.0].value.data();
        // Accumulate into the gradient buffer of `v` if it needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(nodes[v.0].value.shape()));
            }
            f(slot.as_mut().expect("just set").data_mut());
        };

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (xd, wd) = (val(*x), val(*w));
                acc(*x, &mut |dx| conv::backward(geom, xd, wd, g, Some(dx), None, None));
                acc(*w, &mut |dw| conv::backward(geom, xd, wd, g, None, Some(dw), None));
                if let Some(b) = b {
                    acc(*b, &mut |db| conv::backward(geom, xd, wd, g, None, None, Some(db)));
                }
            }
            Op::BatchNormTrain { x, xhat, inv_std } => {
                let [n, c, h, w] = node.value.dims4("batch_norm").expect("rank 4");
                let hw = h * w;
                let m = T::of((n * hw) as f64);
                acc(*x, &mut |dx| {
                    for ch in 0..c {
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for j in base..base + hw {
                                sum_g += g[j];
                                sum_gx += g[j] * xhat[j];
                            }
                        }
                        let k = inv_std[ch] / m;
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for j in base..base + hw {
                                dx[j] += k * (m * g[j] - sum_g - xhat[j] * sum_gx);
                            }
                        }
                    }
                });
            }
            Op::ChannelScale { x, scale } => {
                let [n, c, h, w] = node.value.dims4("batch_norm").expect("rank 4");
                let hw = h * w;
                acc(*x, &mut |dx| {
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            for j in base..base + hw {
                                dx[j] += g[j] * scale[ch];
                            }
                        }
                    }
                });
            }
            Op::Prelu { x, alpha } => {
                let (outer, c, inner) = channel_split(node.value.shape());
                let (xd, ad) = (val(*x), val(*alpha));
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            for j in base..base + inner {
                                dx[j] += if xd[j] >= T::zero() { g[j] } else { g[j] * ad[ch] };
                            }
                        }
                    }
                });
                acc(*alpha, &mut |da| {
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            for j in base..base + inner {
                                if xd[j] < T::zero() {
                                    da[ch] += g[j] * xd[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xd = val(*x);
                acc(*x, &mut |dx| {
                    for j in 0..dx.len() {
                        dx[j] += if xd[j] >= T::zero() { g[j] } else { g[j] * *slope };
                    }
                });
            }
            Op::Relu { x } => {
                let xd = val(*x);
                acc(*x, &mut |dx| {
                    for j in 0..dx.len() {
                        if xd[j] > T::zero() {
                            dx[j] += g[j];
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for j in 0..dx.len() {
                        dx[j] += g[j] * y[j] * (T::one() - y[j]);
                    }
                });
            }
            Op::LogSigmoid { x } => {
                let xd = val(*x);
                acc(*x, &mut |dx| {
                    for j in 0..dx.len() {
                        dx[j] += g[j] * sigmoid(-xd[j]);
                    }
                });
            }
            Op::Log { x } => {
                let xd = val(*x);
                acc(*x, &mut |dx| {
                    for j in 0..dx.len() {
                        dx[j] += g[j] / xd[j];
                    }
                });
            }
            Op::GlobalAvgPool { x } => {
                let [_, _, h, w] = nodes[x.0].value.dims4("global_avg_pool").expect("rank 4");
                let hw = h * w;
                let inv = T::of(1.0 / hw as f64);
                acc(*x, &mut |dx| {
                    for (p, plane) in dx.chunks_mut(hw).enumerate() {
                        let v = g[p] * inv;
                        plane.iter_mut().for_each(|d| *d += v);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let fout = nodes[w.0].value.shape()[0];
                let (xd, wd) = (val(*x), val(*w));
                acc(*x, &mut |dx| T::gemm(n, fout, fin, T::one(), g, false, wd, false, T::one(), dx));
                acc(*w, &mut |dw| T::gemm(fout, n, fin, T::one(), g, true, xd, false, T::one(), dw));
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for row in g.chunks(fout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += *v;
                            }
                        }
                    });
                }
            }
            Op::PixelShuffle { x, r } | Op::PixelUnshuffle { x, r } => {
                let shuffle = matches!(node.op, Op::PixelShuffle { .. });
                let r = *r;
                let [n, c_in, h_in, w_in] = nodes[x.0].value.dims4("pixel_shuffle").expect("rank 4");
                acc(*x, &mut |dx| {
                    // walk the forward index map and route gradients back
                    let (n_, crr, h, w, c) = if shuffle {
                        (n, c_in, h_in, w_in, c_in / (r * r))
                    } else {
                        (n, c_in * r * r, h_in / r, w_in / r, c_in)
                    };
                    let (oh, ow) = (h * r, w * r);
                    for s in 0..n_ {
                        for ch in 0..c {
                            for i in 0..r {
                                for j in 0..r {
                                    let sc = ch * r * r + i * r + j;
                                    for y in 0..h {
                                        let packed = ((s * crr + sc) * h + y) * w;
                                        let spread = ((s * c + ch) * oh + y * r + i) * ow + j;
                                        for xx in 0..w {
                                            if shuffle {
                                                dx[packed + xx] += g[spread + xx * r];
                                            } else {
                                                dx[spread + xx * r] += g[packed + xx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Add { a, b, bcast } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, v)| *d += *v));
                acc(*b, &mut |db| bcast.for_each(g.len(), |i, j| db[j] += g[i]));
            }
            Op::Sub { a, b, bcast } => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, v)| *d += *v));
                acc(*b, &mut |db| bcast.for_each(g.len(), |i, j| db[j] -= g[i]));
            }
            Op::Mul { a, b, bcast } => {
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |da| bcast.for_each(g.len(), |i, j| da[i] += g[i] * bd[j]));
                acc(*b, &mut |db| bcast.for_each(g.len(), |i, j| db[j] += g[i] * ad[i]));
            }
            Op::Scale { x, s } => {
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, v)| *d += *v * *s));
            }
            Op::AddScalar { x } => {
                acc(*x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, v)| *d += *v));
            }
            Op::Concat { parts } => {
                let shape = node.value.shape();
                let (outer, total, inner) = channel_split(shape);
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].value.shape()[1];
                    acc(*p, &mut |dp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + c) * inner];
                            let dst = &mut dp[o * c * inner..(o + 1) * c * inner];
                            dst.iter_mut().zip(src).for_each(|(d, v)| *d += *v);
                        }
                    });
                    offset += c;
                }
            }
            Op::Narrow { x, start, len } => {
                let (outer, c, inner) = channel_split(nodes[x.0].value.shape());
                acc(*x, &mut |dx| {
                    for o in 0..outer {
                        let dst = &mut dx[(o * c + start) * inner..(o * c + start + len) * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, v)| *d += *v);
                    }
                });
            }
            Op::Sum { x } => {
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean { x } => {
                let k = g[0] / T::of(nodes[x.0].value.numel() as f64);
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += k));
            }
            Op::MseMean { a, b } => {
                let (ad, bd) = (val(*a), val(*b));
                let k = T::of(2.0) * g[0] / T::of(ad.len() as f64);
                acc(*a, &mut |da| {
                    for j in 0..da.len() {
                        da[j] += k * (ad[j] - bd[j]);
                    }
                });
                acc(*b, &mut |db| {
                    for j in 0..db.len() {
                        db[j] -= k * (ad[j] - bd[j]);
                    }
                });
            }
            Op::BceWithLogits { x, target } => {
                let xd = val(*x);
                let k = g[0] / T::of(xd.len() as f64);
                acc(*x, &mut |dx| {
                    for j in 0..dx.len() {
                        dx[j] += k * (sigmoid(xd[j]) - *target);
                    }
                });
            }
            Op::Bce { p, target } => {
                let pd = val(*p);
                let k = g[0] / T::of(pd.len() as f64);
                let t = *target;
                acc(*p, &mut |dp| {
                    for j in 0..dp.len() {
                        dp[j] += k * ((T::one() - t) / (T::one() - pd[j]) - t / pd[j]);
                    }
                });
            }
            Op::ResizeBilinear { x } => {
                let [_, _, h, w] = nodes[x.0].value.dims4("resize_bilinear").expect("rank 4");
                let [_, _, oh, ow] = node.value.dims4("resize_bilinear").expect("rank 4");
                let ty = bilinear_taps(h, oh);
                let tx = bilinear_taps(w, ow);
                acc(*x, &mut |dx| {
                    for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        for (yi, a) in ty.iter().enumerate() {
                            for (xi, b) in tx.iter().enumerate() {
                                let v = gp[yi * ow + xi].as_f64();
                                plane[a.i0 * w + b.i0] += T::of(v * (1.0 - a.l) * (1.0 - b.l));
                                plane[a.i0 * w + b.i1] += T::of(v * (1.0 - a.l) * b.l);
                                plane[a.i1 * w + b.i0] += T::of(v * a.l * (1.0 - b.l));
                                plane[a.i1 * w + b.i1] += T::of(v * a.l * b.l);
                            }
                        }
                    }
                });
            }
            Op::ResizeBicubic { x, rows, cols } => {
                let [_, _, h, w] = nodes[x.0].value.dims4("resize_bicubic").expect("rank 4");
                let (oh, ow) = (rows.len(), cols.len());
                let mut horiz = vec![0.0f64; h * ow];
                acc(*x, &mut |dx| {
                    for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        horiz.iter_mut().for_each(|v| *v = 0.0);
                        for (oy, row) in rows.iter().enumerate() {
                            for ox in 0..ow {
                                let v = gp[oy * ow + ox].as_f64();
                                for &(i, wt) in row {
                                    horiz[i * ow + ox] += wt * v;
                                }
                            }
                        }
                        for y in 0..h {
                            for (ox, col) in cols.iter().enumerate() {
                                let v = horiz[y * ow + ox];
                                for &(i, wt) in col {
                                    plane[y * w + i] += T::of(wt * v);
                                }
                            }
                        }
                    }
                });
            }
            Op::AvgPool2 { x } => {
                let [_, _, h, w] = nodes[x.0].value.dims4("avg_pool2").expect("rank 4");
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                acc(*x, &mut |dx| {
                    for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let v = gp[y * ow + xx] * quarter;
                                let i = 2 * y * w + 2 * xx;
                                plane[i] += v;
                                plane[i + 1] += v;
                                plane[i + w] += v;
                                plane[i + w + 1] += v;
                            }
                        }
                    }
                });
            }
        }
    }
}
