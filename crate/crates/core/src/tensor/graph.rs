use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Norms below this are treated as zero by [`Graph::cosine_rows`].
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

enum Op<T: Element> {
    Leaf,
    Add(Var, Var, usize),
    Sub(Var, Var, usize),
    Mul(Var, Var, usize),
    Div(Var, Var, usize),
    AddScalar(Var),
    MulScalar(Var, T),
    Square(Var),
    Sqrt(Var),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    LeakyRelu(Var, T),
    Prelu(Var, Var),
    /// `out[i] = x[index[i]]`; covers shuffles, padding, selection and transposes.
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    /// `out[map[p][i]] = parts[p][i]`; positions never written are zero.
    Scatter {
        parts: Vec<(Var, Vec<usize>)>,
    },
    CosineRows {
        x: Var,
        y: Var,
        rows: Vec<CosineRow<T>>,
    },
}

#[derive(Clone, Copy)]
struct CosineRow<T> {
    norm_x: T,
    norm_y: T,
    guarded: bool,
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed ops.
///
/// Ops run eagerly; a node's op is retained only when one of its inputs
/// requires gradients. A graph supports a single [`backward`](Graph::backward);
/// build a fresh graph for the next forward pass.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
    macs: u64,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Number of trailing elements of `a` that share one element of `b`, when
/// `b` is `a`'s leading dims followed by singleton dims (or a single value).
fn broadcast_inner(a: &[usize], b: &[usize]) -> Option<usize> {
    let mut kept = b.len();
    while kept > 0 && b[kept - 1] == 1 {
        kept -= 1;
    }
    if kept == 0 {
        return Some(numel(a));
    }
    if b.len() > a.len() || b[..kept] != a[..kept] {
        return None;
    }
    Some(numel(&a[kept..]))
}

fn slot<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by forward convolutions and products so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        let value = Tensor::from_parts(value.shape, value.data);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::invalid("graph", format!("unknown variable {}", v.0)));
        }
        Ok(())
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it requires gradients iff the tensor does.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Records a copy of `t` as a leaf (used for parameters).
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Op::Leaf, t.requires_grad)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.req(v)
    }

    /// Gradient of the last backward's loss w.r.t. leaf `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of leaf `v` (if any) into `target`'s accumulator.
    pub fn accumulate_grad_into(&self, v: Var, target: &mut Tensor<T>) -> Result<()> {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(&g.data)?;
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str) -> Result<usize> {
        self.check(a)?;
        self.check(b)?;
        broadcast_inner(self.shape(a), self.shape(b))
            .ok_or_else(|| Error::shape(op, self.shape(a), self.shape(b)))
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, usize, bool)> {
        let inner = self.binary(a, b, name)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data[i / inner]))
            .collect();
        let out = Tensor::from_parts(av.shape.clone(), data);
        Ok((out, inner, self.req(a) || self.req(b)))
    }

    /// `a + b`; `b` may broadcast over trailing dims of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, inner, rg) = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b, inner), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, inner, rg) = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b, inner), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, inner, rg) = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b, inner), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, inner, rg) = self.elementwise(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b, inner), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|x| x + s);
        let rg = self.req(a);
        Ok(self.push(t, Op::AddScalar(a), rg))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|x| x * s);
        let rg = self.req(a);
        Ok(self.push(t, Op::MulScalar(a, s), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.mul_scalar(a, -T::one())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a).map(|x| x * x);
        let rg = self.req(a);
        Ok(self.push(t, Op::Square(a), rg))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if self.value(a).data.iter().any(|&x| x < T::zero()) {
            return Err(Error::invalid("sqrt", "negative input"));
        }
        let t = self.value(a).map(|x| x.sqrt());
        let rg = self.req(a);
        Ok(self.push(t, Op::Sqrt(a), rg))
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        self.macs += (m * k * n) as u64;
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, &self.value(a).data, false, &self.value(b).data, false, &mut out, false);
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Dense layer `x·wᵀ + b` with `x: [N, I]`, `w: [O, I]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("linear", sx, sw));
        }
        let (n, i, o) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [o] {
                return Err(Error::shape("linear", sw, self.shape(b)));
            }
        }
        self.macs += (n * i * o) as u64;
        let mut out = vec![T::zero(); n * o];
        T::gemm(n, i, o, &self.value(x).data, false, &self.value(w).data, true, &mut out, false);
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value.data;
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv).for_each(|(y, &bb)| *y = *y + bb);
            }
        }
        let rg = self.req(x) || self.req(w) || b.is_some_and(|b| self.req(b));
        Ok(self.push(Tensor::from_parts(vec![n, o], out), Op::Linear { x, w, b }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s: T = self.value(a).data.iter().copied().sum();
        let rg = self.req(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        let s: T = v.data.iter().copied().sum::<T>() / T::from_f64(v.data.len() as f64);
        let rg = self.req(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Sums everything but the leading axis: `[N, ...] → [N]`.
    pub fn sum_per_sample(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let v = self.value(a);
        let n = v.shape[0];
        let inner = v.data.len() / n;
        let data = v.data.chunks(inner).map(|c| c.iter().copied().sum()).collect();
        let rg = self.req(a);
        Ok(self.push(Tensor::from_parts(vec![n], data), Op::SumPerSample(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(a)?;
        if numel(shape) != self.value(a).numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let t = Tensor::from_parts(shape.to_vec(), self.value(a).data.clone());
        let rg = self.req(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// `[N, ...] → [N, rest]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.shape(a);
        let n = s[0];
        let rest = numel(&s[1..]);
        self.reshape(a, &[n, rest])
    }

    /// 2-D cross-correlation, `input: [N, C, H, W]`, `weight: [F, C, Kh, Kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let geom = ConvGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [geom.filters] {
                return Err(Error::shape("conv2d bias", self.shape(w), self.shape(b)));
            }
        }
        self.macs += geom.macs();
        let out = conv2d_forward(
            &self.value(x).data,
            &self.value(w).data,
            b.map(|b| self.nodes[b.0].value.data.as_slice()),
            &geom,
        );
        let rg = self.req(x) || self.req(w) || b.is_some_and(|b| self.req(b));
        let t = Tensor::from_parts(geom.output_shape().to_vec(), out);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// `x` where `x ≥ 0`, `slope·x` elsewhere.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| if v >= T::zero() { v } else { slope * v });
        let rg = self.req(x);
        Ok(self.push(t, Op::LeakyRelu(x, slope), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, T::zero())
    }

    /// Leaky ReLU whose negative slope is the learnable single-element tensor `slope`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        self.check(x)?;
        self.check(slope)?;
        if self.value(slope).numel() != 1 {
            return Err(Error::shape("prelu", self.shape(x), self.shape(slope)));
        }
        let a = self.value(slope).item();
        let t = self.value(x).map(|v| if v >= T::zero() { v } else { a * v });
        let rg = self.req(x) || self.req(slope);
        Ok(self.push(t, Op::Prelu(x, slope), rg))
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, index: Vec<usize>) -> Var {
        let src = &self.value(x).data;
        let data = index.iter().map(|&i| src[i]).collect();
        let rg = self.req(x);
        self.push(Tensor::from_parts(shape, data), Op::Gather { x, index }, rg)
    }

    fn dims4(&self, x: Var, op: &'static str) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::invalid(op, format!("expected [N, C, H, W], got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// `[N, C·r², H, W] → [N, C, rH, rW]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.check(x)?;
        let [n, c, h, w] = self.dims4(x, "pixel_shuffle")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::invalid(
                "pixel_shuffle",
                format!("{c} channels not divisible by r² = {}", r * r),
            ));
        }
        let oc = c / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut index = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for co in 0..oc {
                for y in 0..oh {
                    for xo in 0..ow {
                        let ci = co * r * r + (y % r) * r + xo % r;
                        index.push(((b * c + ci) * h + y / r) * w + xo / r);
                    }
                }
            }
        }
        Ok(self.gather(x, vec![n, oc, oh, ow], index))
    }

    /// Inverse of [`pixel_shuffle`](Self::pixel_shuffle): `[N, C, rH, rW] → [N, C·r², H, W]`.
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        self.check(x)?;
        let [n, c, h, w] = self.dims4(x, "pixel_unshuffle")?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::invalid(
                "pixel_unshuffle",
                format!("spatial extents {h}×{w} not divisible by {r}"),
            ));
        }
        let (oc, oh, ow) = (c * r * r, h / r, w / r);
        let mut index = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for co in 0..oc {
                let (ci, i, j) = (co / (r * r), (co % (r * r)) / r, co % r);
                for y in 0..oh {
                    for xo in 0..ow {
                        index.push(((b * c + ci) * h + y * r + i) * w + xo * r + j);
                    }
                }
            }
        }
        Ok(self.gather(x, vec![n, oc, oh, ow], index))
    }

    /// Pads H and W by `pad` on each side, repeating edge values.
    pub fn replicate_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        self.check(x)?;
        let [n, c, h, w] = self.dims4(x, "replicate_pad")?;
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut index = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for y in 0..oh {
                let sy = y.saturating_sub(pad).min(h - 1);
                for xo in 0..ow {
                    let sx = xo.saturating_sub(pad).min(w - 1);
                    index.push((plane * h + sy) * w + sx);
                }
            }
        }
        Ok(self.gather(x, vec![n, c, oh, ow], index))
    }

    /// Selects entries along axis 0 or 1.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if axis >= s.len() || axis > 1 || indices.is_empty() {
            return Err(Error::invalid("index_select", format!("axis {axis} on shape {s:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[axis]) {
            return Err(Error::invalid("index_select", format!("index {bad} ≥ extent {}", s[axis])));
        }
        let outer: usize = s[..axis].iter().product();
        let inner = numel(&s[axis + 1..]);
        let mut index = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * s[axis] + i) * inner;
                index.extend(base..base + inner);
            }
        }
        let mut shape = s;
        shape[axis] = indices.len();
        Ok(self.gather(x, shape, index))
    }

    /// Writes each `[N, k_p, H, W]` part into output channels `channels_p`
    /// of a `[N, total, H, W]` result; unassigned channels are zero.
    pub fn assemble_channels(&mut self, parts: &[(Var, Vec<usize>)], total: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("assemble_channels", "no parts"))?;
        self.check(first.0)?;
        let [n, _, h, w] = self.dims4(first.0, "assemble_channels")?;
        let mut out = vec![T::zero(); n * total * h * w];
        let mut seen = vec![false; total];
        let mut maps = Vec::with_capacity(parts.len());
        let mut rg = false;
        for (v, chans) in parts {
            self.check(*v)?;
            let [pn, pc, ph, pw] = self.dims4(*v, "assemble_channels")?;
            if pn != n || ph != h || pw != w || pc != chans.len() {
                return Err(Error::shape("assemble_channels", &[n, chans.len(), h, w], self.shape(*v)));
            }
            let mut map = Vec::with_capacity(pn * pc * h * w);
            for b in 0..n {
                for &co in chans {
                    if co >= total || seen[co] && b == 0 {
                        return Err(Error::invalid(
                            "assemble_channels",
                            format!("channel {co} out of range or assigned twice"),
                        ));
                    }
                    if b == 0 {
                        seen[co] = true;
                    }
                    let base = (b * total + co) * h * w;
                    map.extend(base..base + h * w);
                }
            }
            let src = &self.value(*v).data;
            for (i, &dst) in map.iter().enumerate() {
                out[dst] = src[i];
            }
            rg |= self.req(*v);
            maps.push((*v, map));
        }
        let t = Tensor::from_parts(vec![n, total, h, w], out);
        Ok(self.push(t, Op::Scatter { parts: maps }, rg))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::invalid("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        Ok(self.gather(x, vec![c, r], index))
    }

    /// Row-wise cosine similarity of `[N, m]` matrices → `[N]`.
    ///
    /// A row whose norm on either side is below `1e-12` yields 1 when both
    /// sides are below it and 0 otherwise, with zero gradient.
    pub fn cosine_rows(&mut self, x: Var, y: Var) -> Result<Var> {
        self.check(x)?;
        self.check(y)?;
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sx != sy || sx.len() != 2 {
            return Err(Error::shape("cosine_rows", sx, sy));
        }
        let (n, m) = (sx[0], sx[1]);
        let floor = T::from_f64(COSINE_NORM_FLOOR);
        let (xv, yv) = (&self.value(x).data, &self.value(y).data);
        let mut rows = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let (a, b) = (&xv[r * m..(r + 1) * m], &yv[r * m..(r + 1) * m]);
            let dot: T = a.iter().zip(b).map(|(&p, &q)| p * q).sum();
            let sxx = a.iter().map(|&p| p * p).sum::<T>();
            let syy = b.iter().map(|&q| q * q).sum::<T>();
            let (nx, ny) = (sxx.sqrt(), syy.sqrt());
            let guarded = nx < floor || ny < floor;
            out.push(if guarded {
                if nx < floor && ny < floor {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                // sqrt(sxx·syy) makes identical rows come out at exactly 1.
                (dot / (sxx * syy).sqrt()).max(-T::one()).min(T::one())
            });
            rows.push(CosineRow {
                norm_x: nx,
                norm_y: ny,
                guarded,
            });
        }
        let rg = self.req(x) || self.req(y);
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::CosineRows { x, y, rows }, rg))
    }

    /// Reverse pass from the scalar `loss`; afterwards [`grad`](Self::grad)
    /// returns dloss/dleaf for every leaf that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.req(loss) {
            self.grads = leaf_grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(go) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value.data;
            let req = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    leaf_grads[i] = Some(Tensor::from_parts(node.value.shape.clone(), go));
                }
                Op::Add(a, b, inner) | Op::Sub(a, b, inner) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                    if req(*a) {
                        let ga = slot(&mut grads, *a, go.len());
                        ga.iter_mut().zip(&go).for_each(|(g, &d)| *g = *g + d);
                    }
                    if req(*b) {
                        let gb = slot(&mut grads, *b, val(*b).len());
                        for (k, &d) in go.iter().enumerate() {
                            gb[k / inner] = gb[k / inner] + sign * d;
                        }
                    }
                }
                Op::Mul(a, b, inner) => {
                    let (av, bv) = (val(*a), val(*b));
                    if req(*a) {
                        let ga = slot(&mut grads, *a, go.len());
                        for (k, &d) in go.iter().enumerate() {
                            ga[k] = ga[k] + d * bv[k / inner];
                        }
                    }
                    if req(*b) {
                        let gb = slot(&mut grads, *b, bv.len());
                        for (k, &d) in go.iter().enumerate() {
                            gb[k / inner] = gb[k / inner] + d * av[k];
                        }
                    }
                }
                Op::Div(a, b, inner) => {
                    let (av, bv) = (val(*a), val(*b));
                    if req(*a) {
                        let ga = slot(&mut grads, *a, go.len());
                        for (k, &d) in go.iter().enumerate() {
                            ga[k] = ga[k] + d / bv[k / inner];
                        }
                    }
                    if req(*b) {
                        let gb = slot(&mut grads, *b, bv.len());
                        for (k, &d) in go.iter().enumerate() {
                            let q = bv[k / inner];
                            gb[k / inner] = gb[k / inner] - d * av[k] / (q * q);
                        }
                    }
                }
                Op::AddScalar(a) => {
                    let ga = slot(&mut grads, *a, go.len());
                    ga.iter_mut().zip(&go).for_each(|(g, &d)| *g = *g + d);
                }
                Op::MulScalar(a, s) => {
                    let ga = slot(&mut grads, *a, go.len());
                    ga.iter_mut().zip(&go).for_each(|(g, &d)| *g = *g + d * *s);
                }
                Op::Square(a) => {
                    let av = val(*a);
                    let two = T::from_f64(2.0);
                    let ga = slot(&mut grads, *a, go.len());
                    for (k, &d) in go.iter().enumerate() {
                        ga[k] = ga[k] + two * av[k] * d;
                    }
                }
                Op::Sqrt(a) => {
                    let yv = &node.value.data;
                    let half = T::from_f64(0.5);
                    let ga = slot(&mut grads, *a, go.len());
                    for (k, &d) in go.iter().enumerate() {
                        ga[k] = ga[k] + d * half / yv[k];
                    }
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if req(*a) {
                        let ga = slot(&mut grads, *a, m * k);
                        T::gemm(m, n, k, &go, false, val(*b), true, ga, true);
                    }
                    if req(*b) {
                        let gb = slot(&mut grads, *b, k * n);
                        T::gemm(k, m, n, val(*a), true, &go, false, gb, true);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (sx, sw) = (&self.nodes[x.0].value.shape, &self.nodes[w.0].value.shape);
                    let (n, i_dim, o) = (sx[0], sx[1], sw[0]);
                    if req(*x) {
                        let gx = slot(&mut grads, *x, n * i_dim);
                        T::gemm(n, o, i_dim, &go, false, val(*w), false, gx, true);
                    }
                    if req(*w) {
                        let gw = slot(&mut grads, *w, o * i_dim);
                        T::gemm(o, n, i_dim, &go, true, val(*x), false, gw, true);
                    }
                    if let Some(b) = b.filter(|b| req(*b)) {
                        let gb = slot(&mut grads, b, o);
                        for row in go.chunks(o) {
                            gb.iter_mut().zip(row).for_each(|(g, &d)| *g = *g + d);
                        }
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let len = val(*a).len();
                    let d = if matches!(node.op, Op::Mean(_)) {
                        go[0] / T::from_f64(len as f64)
                    } else {
                        go[0]
                    };
                    let ga = slot(&mut grads, *a, len);
                    ga.iter_mut().for_each(|g| *g = *g + d);
                }
                Op::SumPerSample(a) => {
                    let len = val(*a).len();
                    let inner = len / go.len();
                    let ga = slot(&mut grads, *a, len);
                    for (k, g) in ga.iter_mut().enumerate() {
                        *g = *g + go[k / inner];
                    }
                }
                Op::Reshape(a) => {
                    let ga = slot(&mut grads, *a, go.len());
                    ga.iter_mut().zip(&go).for_each(|(g, &d)| *g = *g + d);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let need_b = b.is_some_and(&req);
                    let cg = conv2d_backward(val(*x), val(*w), &go, geom, req(*x), req(*w), need_b);
                    for (v, g) in [(Some(*x), cg.input), (Some(*w), cg.weight), (*b, cg.bias)] {
                        if let (Some(v), Some(g)) = (v, g) {
                            let acc = slot(&mut grads, v, g.len());
                            acc.iter_mut().zip(&g).for_each(|(a, &d)| *a = *a + d);
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = val(*x);
                    let gx = slot(&mut grads, *x, go.len());
                    for (k, &d) in go.iter().enumerate() {
                        gx[k] = gx[k] + if xv[k] >= T::zero() { d } else { d * *slope };
                    }
                }
                Op::Prelu(x, a) => {
                    let xv = val(*x);
                    let slope = val(*a)[0];
                    if req(*x) {
                        let gx = slot(&mut grads, *x, go.len());
                        for (k, &d) in go.iter().enumerate() {
                            gx[k] = gx[k] + if xv[k] >= T::zero() { d } else { d * slope };
                        }
                    }
                    if req(*a) {
                        let s: T = go
                            .iter()
                            .zip(xv)
                            .filter(|(_, &xk)| xk < T::zero())
                            .map(|(&d, &xk)| d * xk)
                            .sum();
                        let ga = slot(&mut grads, *a, 1);
                        ga[0] = ga[0] + s;
                    }
                }
                Op::Gather { x, index } => {
                    let gx = slot(&mut grads, *x, val(*x).len());
                    for (k, &src) in index.iter().enumerate() {
                        gx[src] = gx[src] + go[k];
                    }
                }
                Op::Scatter { parts } => {
                    for (v, map) in parts {
                        if req(*v) {
                            let gv = slot(&mut grads, *v, map.len());
                            for (k, &dst) in map.iter().enumerate() {
                                gv[k] = gv[k] + go[dst];
                            }
                        }
                    }
                }
                Op::CosineRows { x, y, rows } => {
                    let (xv, yv) = (val(*x), val(*y));
                    let m = xv.len() / rows.len();
                    let cos = &node.value.data;
                    for (side, (this, other)) in [(*x, (xv, yv)), (*y, (yv, xv))] {
                        if !req(side) {
                            continue;
                        }
                        let gs = slot(&mut grads, side, xv.len());
                        for (r, row) in rows.iter().enumerate() {
                            if row.guarded {
                                continue;
                            }
                            let (n_this, n_other) = if side == *x {
                                (row.norm_x, row.norm_y)
                            } else {
                                (row.norm_y, row.norm_x)
                            };
                            let d = go[r];
                            let inv = T::one() / (n_this * n_other);
                            let c = cos[r] / (n_this * n_this);
                            for k in r * m..(r + 1) * m {
                                gs[k] = gs[k] + d * (other[k] * inv - c * this[k]);
                            }
                        }
                        if side == *x && x == y {
                            break;
                        }
                    }
                }
            }
        }
        self.grads = leaf_grads;
        Ok(())
    }
}
