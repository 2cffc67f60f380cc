use super::conv::{self, ConvGeom, Padding};
use super::{Tensor, TensorError, NORM_DELTA};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    LastAxis {
        x: Var,
        v: Var,
        kind: Broadcast,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    ChannelMean(Var),
    ChannelStd {
        x: Var,
        mean: Vec<f64>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable operations in creation order.
///
/// Nodes are appended only after their inputs exist, so the node list is a
/// topological order and [`Tape::backward`] is a single reverse sweep.
/// Gradients accumulate on leaves across calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a detached tensor; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf; zeros if no path reached it,
    /// `None` for detached values and intermediate nodes.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient length"),
            None => Tensor::zeros(shape),
        })
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Which side of its kink every `relu` and `abs` input element sits on,
    /// in recording order. Two evaluations of the same graph with equal
    /// patterns lie in the same smooth piece.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => out.extend(self.value(x).data().iter().map(|&v| v > 0.0)),
                Op::Abs(x) => out.extend(self.value(x).data().iter().map(|&v| v >= 0.0)),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.any_grad(inputs);
        let value = Tensor::new(shape, data).expect("op produced a consistent shape");
        self.push(value, op, requires_grad)
    }

    // ----- convolution -------------------------------------------------

    /// 2D cross-correlation of an `H×W×Cin` map with a `k×k×Cin×Cout` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        self.conv("conv2d", 3, input, kernel, stride, padding)
    }

    /// 3D cross-correlation of a `D×H×W×Cin` volume with a
    /// `k×k×k×Cin×Cout` kernel, stride 1.
    pub fn conv3d(&mut self, input: Var, kernel: Var, padding: Padding) -> Result<Var, TensorError> {
        self.conv("conv3d", 4, input, kernel, 1, padding)
    }

    fn conv(
        &mut self,
        op: &'static str,
        rank: usize,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let in_shape = self.shape(input);
        if in_shape.len() != rank {
            return Err(TensorError::Rank {
                op,
                expected: rank,
                shape: in_shape.to_vec(),
            });
        }
        let geom = ConvGeom::new(op, in_shape, self.shape(kernel), stride, &padding)?;
        let out = conv::forward(&geom, self.value(input).data(), self.value(kernel).data());
        let shape = geom.output_shape(rank - 1);
        Ok(self.record(shape, out, Op::Conv { input, kernel, geom }, &[input, kernel]))
    }

    // ----- elementwise -------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        self.record(t.shape().to_vec(), data, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.abs()).collect();
        self.record(t.shape().to_vec(), data, Op::Abs(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let data = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.record(self.shape(a).to_vec(), data, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let data = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.record(self.shape(a).to_vec(), data, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let data = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.record(self.shape(a).to_vec(), data, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        self.record(t.shape().to_vec(), data, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v + c).collect();
        self.record(t.shape().to_vec(), data, Op::AddScalar(x), &[x])
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.record(vec![1], vec![s], Op::Sum(x), &[x])
    }

    fn zip(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        Ok(ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    // ----- per-channel (last axis) broadcasting -------------------------

    /// Adds a `[C]` vector to every position of a `...×C` tensor.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        self.last_axis("bias_add", x, bias, Broadcast::Add)
    }

    pub fn sub_channel(&mut self, x: Var, v: Var) -> Result<Var, TensorError> {
        self.last_axis("sub_channel", x, v, Broadcast::Sub)
    }

    pub fn mul_channel(&mut self, x: Var, v: Var) -> Result<Var, TensorError> {
        self.last_axis("mul_channel", x, v, Broadcast::Mul)
    }

    pub fn div_channel(&mut self, x: Var, v: Var) -> Result<Var, TensorError> {
        self.last_axis("div_channel", x, v, Broadcast::Div)
    }

    fn last_axis(
        &mut self,
        op: &'static str,
        x: Var,
        v: Var,
        kind: Broadcast,
    ) -> Result<Var, TensorError> {
        let (tx, tv) = (self.value(x), self.value(v));
        let c = *tx.shape().last().expect("rank >= 1");
        if tv.rank() != 1 || tv.len() != c {
            return Err(TensorError::ShapeMismatch {
                op,
                left: tx.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
        let vd = tv.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let b = vd[i % c];
                match kind {
                    Broadcast::Add => a + b,
                    Broadcast::Sub => a - b,
                    Broadcast::Mul => a * b,
                    Broadcast::Div => a / b,
                }
            })
            .collect();
        Ok(self.record(tx.shape().to_vec(), data, Op::LastAxis { x, v, kind }, &[x, v]))
    }

    /// Per-channel mean over all positions of a `...×C` tensor.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let mean = channel_mean(self.value(x));
        let c = mean.len();
        self.record(vec![c], mean, Op::ChannelMean(x), &[x])
    }

    /// Per-channel `sqrt(variance + delta)` with the population variance.
    pub fn channel_std(&mut self, x: Var, delta: f64) -> Var {
        let t = self.value(x);
        let mean = channel_mean(t);
        let c = mean.len();
        let n = (t.len() / c) as f64;
        let mut var = vec![0.0; c];
        for (i, &v) in t.data().iter().enumerate() {
            let d = v - mean[i % c];
            var[i % c] += d * d;
        }
        let sigma = var.iter().map(|s| (s / n + delta).sqrt()).collect();
        self.record(vec![c], sigma, Op::ChannelStd { x, mean }, &[x])
    }

    /// Channel mean and standard deviation with the normalization delta.
    pub fn channel_stats(&mut self, x: Var) -> (Var, Var) {
        (self.channel_mean(x), self.channel_std(x, NORM_DELTA))
    }

    // ----- layout -------------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            reason: "no parts given".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                axis,
                rank: base.len(),
            });
        }
        let mut extent = 0;
        for (index, &p) in parts.iter().enumerate() {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(a, (x, y))| a == axis || x == y);
            if !compatible {
                return Err(TensorError::ConcatMismatch {
                    index,
                    axis,
                    shape: s.to_vec(),
                    expected: base.clone(),
                });
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        Ok(self.record(
            shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).reshape(shape.to_vec())?;
        let requires_grad = self.any_grad(&[x]);
        Ok(self.push(t, Op::Reshape(x), requires_grad))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || std::mem::replace(&mut seen[a], true) {
                return Err(TensorError::InvalidArgument {
                    op: "permute",
                    reason: format!("{axes:?} is not a permutation of 0..{rank}"),
                });
            }
        }
        if axes.len() != rank {
            return Err(TensorError::InvalidArgument {
                op: "permute",
                reason: format!("{axes:?} is not a permutation of 0..{rank}"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for_each_permuted(&shape, axes, |dst, s| data[dst] = src[s]);
        Ok(self.record(
            out_shape,
            data,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            &[x],
        ))
    }

    // ----- backward -----------------------------------------------------

    /// Propagates d(loss)/d(node) to every tracked leaf, adding to any
    /// gradient already accumulated there. Returns the number of nodes whose
    /// backward rule ran.
    pub fn backward(&mut self, loss: Var) -> Result<usize, TensorError> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let Self { nodes, grads } = self;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut visited = 0;

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            visited += 1;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let n = &nodes[v.0];
                if n.requires_grad {
                    let buf = adj[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {
                    let slot = grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    slot.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                }
                Op::Conv {
                    input,
                    kernel,
                    geom,
                } => {
                    let x = nodes[input.0].value.data();
                    let k = nodes[kernel.0].value.data();
                    let mut gi = nodes[input.0]
                        .requires_grad
                        .then(|| vec![0.0; x.len()]);
                    let mut gk = nodes[kernel.0]
                        .requires_grad
                        .then(|| vec![0.0; k.len()]);
                    conv::backward(geom, x, k, &g, gi.as_deref_mut(), gk.as_deref_mut());
                    if let Some(gi) = gi {
                        acc(*input, &mut |b| add_into(b, &gi));
                    }
                    if let Some(gk) = gk {
                        acc(*kernel, &mut |b| add_into(b, &gk));
                    }
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, &mut |b| {
                        for ((b, &d), &v) in b.iter_mut().zip(&g).zip(xv) {
                            if v > 0.0 {
                                *b += d;
                            }
                        }
                    });
                }
                Op::Abs(x) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, &mut |b| {
                        for ((b, &d), &v) in b.iter_mut().zip(&g).zip(xv) {
                            if v > 0.0 {
                                *b += d;
                            } else if v < 0.0 {
                                *b -= d;
                            }
                        }
                    });
                }
                Op::Add(a, c) => {
                    acc(*a, &mut |b| add_into(b, &g));
                    acc(*c, &mut |b| add_into(b, &g));
                }
                Op::Sub(a, c) => {
                    acc(*a, &mut |b| add_into(b, &g));
                    acc(*c, &mut |b| b.iter_mut().zip(&g).for_each(|(b, d)| *b -= d));
                }
                Op::Mul(a, c) => {
                    let (av, cv) = (nodes[a.0].value.data(), nodes[c.0].value.data());
                    acc(*a, &mut |b| {
                        for ((b, d), y) in b.iter_mut().zip(&g).zip(cv) {
                            *b += d * y;
                        }
                    });
                    acc(*c, &mut |b| {
                        for ((b, d), x) in b.iter_mut().zip(&g).zip(av) {
                            *b += d * x;
                        }
                    });
                }
                Op::Scale(x, factor) => {
                    acc(*x, &mut |b| b.iter_mut().zip(&g).for_each(|(b, d)| *b += d * factor));
                }
                Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |b| add_into(b, &g)),
                Op::Sum(x) => acc(*x, &mut |b| b.iter_mut().for_each(|b| *b += g[0])),
                Op::LastAxis { x, v, kind } => {
                    let xv = nodes[x.0].value.data();
                    let vv = nodes[v.0].value.data();
                    let c = vv.len();
                    acc(*x, &mut |b| {
                        for (i, (b, d)) in b.iter_mut().zip(&g).enumerate() {
                            *b += match kind {
                                Broadcast::Add | Broadcast::Sub => *d,
                                Broadcast::Mul => d * vv[i % c],
                                Broadcast::Div => d / vv[i % c],
                            };
                        }
                    });
                    acc(*v, &mut |b| {
                        for (i, d) in g.iter().enumerate() {
                            let j = i % c;
                            b[j] += match kind {
                                Broadcast::Add => *d,
                                Broadcast::Sub => -d,
                                Broadcast::Mul => d * xv[i],
                                Broadcast::Div => -d * xv[i] / (vv[j] * vv[j]),
                            };
                        }
                    });
                }
                Op::Concat { parts, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let row = shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let block = nodes[p.0].value.shape()[*axis] * inner;
                        acc(p, &mut |b| {
                            for o in 0..outer {
                                let src = &g[o * row + offset..o * row + offset + block];
                                add_into(&mut b[o * block..(o + 1) * block], src);
                            }
                        });
                        offset += block;
                    }
                }
                Op::ChannelMean(x) => {
                    let n = (nodes[x.0].value.len() / g.len()) as f64;
                    let c = g.len();
                    acc(*x, &mut |b| {
                        for (i, b) in b.iter_mut().enumerate() {
                            *b += g[i % c] / n;
                        }
                    });
                }
                Op::ChannelStd { x, mean } => {
                    let xv = nodes[x.0].value.data();
                    let sigma = node.value.data();
                    let c = sigma.len();
                    let n = (xv.len() / c) as f64;
                    acc(*x, &mut |b| {
                        for (i, b) in b.iter_mut().enumerate() {
                            let j = i % c;
                            *b += g[j] * (xv[i] - mean[j]) / (n * sigma[j]);
                        }
                    });
                }
                Op::Permute { x, axes } => {
                    let in_shape = nodes[x.0].value.shape();
                    acc(*x, &mut |b| {
                        for_each_permuted(in_shape, axes, |dst, src| b[src] += g[dst]);
                    });
                }
            }
        }
        Ok(visited)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn channel_mean(t: &Tensor) -> Vec<f64> {
    let c = *t.shape().last().expect("rank >= 1");
    let n = (t.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for (i, &v) in t.data().iter().enumerate() {
        mean[i % c] += v;
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Calls `f(output_flat, input_flat)` for every element of a permutation of
/// a tensor with shape `in_shape`.
fn for_each_permuted(in_shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = in_shape.len();
    let mut in_strides = vec![1; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * in_shape[a + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = in_shape.iter().product();
    let mut idx = vec![0; rank];
    let mut src = 0;
    for dst in 0..total {
        f(dst, src);
        for a in (0..rank).rev() {
            idx[a] += 1;
            src += strides[a];
            if idx[a] < out_shape[a] {
                break;
            }
            src -= strides[a] * out_shape[a];
            idx[a] = 0;
        }
    }
}
