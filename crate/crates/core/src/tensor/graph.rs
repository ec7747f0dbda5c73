use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero border fill that preserves height and width; kernels must be odd.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Softplus(Var),
    EluPlusOne(Var),
    BiasedRelu(Var, f64),
    Scale(Var, f64),
    Sum(Var),
    Matmul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    },
    AddRowBias(Var, Var),
    Concat(Vec<Var>),
    Narrow {
        input: Var,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    EventLogLik {
        intensity: Var,
        events: Vec<bool>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::EluPlusOne(_) => "elu_plus_one",
            Op::BiasedRelu(..) => "biased_relu",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Matmul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Concat(_) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape(_) => "reshape",
            Op::EventLogLik { .. } => "event_log_likelihood",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::AddRowBias(a, b) => {
                vec![*a, *b]
            }
            Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::EluPlusOne(a)
            | Op::BiasedRelu(a, _)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::Narrow { input, .. } => vec![*input],
            Op::EventLogLik { intensity, .. } => vec![*intensity],
            Op::Conv2d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// The computation record: an append-only list of nodes in topological order.
///
/// A graph is built for one forward pass and consumed by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to a leaf. Leaves that the root does
    /// not depend on get zeros; interior nodes return `None`.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(exp(x) + 1)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn elu_plus_one(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable leaf holding a copy of `t`'s data.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push_leaf(shape, t.into_data(), false)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            grad: None,
        }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (shape, value) = self.eval(&op)?;
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(op.name(), format!("output entry {i} is {}", value[i])));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::input(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |b: Option<Var>| b.ok_or_else(|| Error::input(format!("{op:?} needs a second operand")));
        match op {
            ElementwiseOp::Add => self.add(a, binary(b)?),
            ElementwiseOp::Sub => self.sub(a, binary(b)?),
            ElementwiseOp::Mul => self.mul(a, binary(b)?),
            ElementwiseOp::Sigmoid => self.sigmoid(a),
            ElementwiseOp::Tanh => self.tanh(a),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.push(Op::Mul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softplus(a))
    }

    pub fn elu_plus_one(&mut self, a: Var) -> Result<Var> {
        self.push(Op::EluPlusOne(a))
    }

    /// `eps + max(x, 0)`
    pub fn biased_relu(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.push(Op::BiasedRelu(a, eps))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.push(Op::Scale(a, k))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::input(format!("matmul: cannot multiply {sa:?} by {sb:?}")));
        }
        self.push(Op::Matmul(a, b))
    }

    /// Cross-correlation of a `[C, H, W]` input with `[F, C, kH, kW]` kernels.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: Padding) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 3 || sk.len() != 4 {
            return Err(Error::input(format!(
                "conv2d: expected [C,H,W] input and [F,C,kH,kW] kernel, got {si:?} and {sk:?}"
            )));
        }
        if si[0] != sk[1] {
            return Err(Error::input(format!(
                "conv2d: input has {} channels, kernel expects {}",
                si[0], sk[1]
            )));
        }
        let (ph, pw) = match padding {
            Padding::Same => {
                if sk[2] % 2 == 0 || sk[3] % 2 == 0 {
                    return Err(Error::input(format!(
                        "conv2d: same padding needs odd kernel extents, got {}x{}",
                        sk[2], sk[3]
                    )));
                }
                (sk[2] / 2, sk[3] / 2)
            }
            Padding::Valid => (0, 0),
        };
        if si[1] + 2 * ph < sk[2] || si[2] + 2 * pw < sk[3] {
            return Err(Error::input("conv2d: kernel larger than padded input"));
        }
        let geometry = ConvGeometry {
            channels: si[0],
            height: si[1],
            width: si[2],
            filters: sk[0],
            kh: sk[2],
            kw: sk[3],
            ph,
            pw,
        };
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(Error::input(format!(
                    "conv2d: bias shape {:?} does not match {} filters",
                    self.shape(b),
                    sk[0]
                )));
            }
        }
        self.push(Op::Conv2d {
            input,
            kernel,
            bias,
            geometry,
        })
    }

    /// Adds `b[f]` to every entry of row `f` of `x` (`x` is `[F, ...]`, `b` is `[F]`).
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        if self.shape(b).len() != 1 || self.shape(b)[0] != self.shape(x)[0] {
            return Err(Error::input(format!(
                "add_row_bias: bias {:?} does not match leading axis of {:?}",
                self.shape(b),
                self.shape(x)
            )));
        }
        self.push(Op::AddRowBias(x, b))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::input("concat: no operands"))?;
        let tail = &self.shape(*first)[1..];
        for p in parts {
            if &self.shape(*p)[1..] != tail {
                return Err(Error::input(format!(
                    "concat: trailing shape {:?} differs from {:?}",
                    &self.shape(*p)[1..],
                    tail
                )));
            }
        }
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        if len == 0 || start + len > self.shape(input)[0] {
            return Err(Error::input(format!(
                "narrow: range {start}..{} outside leading extent {}",
                start + len,
                self.shape(input)[0]
            )));
        }
        self.push(Op::Narrow { input, start, len })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        if shape.contains(&0) || shape.iter().product::<usize>() != self.value(input).len() {
            return Err(Error::input(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(input)
            )));
        }
        let op = Op::Reshape(input);
        let value = self.value(input).to_vec();
        let requires_grad = self.requires_grad(input);
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Discretized point-process log-likelihood at unit resolution:
    /// `sum over event cells of log(lambda) - sum over other cells of lambda`.
    pub fn event_log_likelihood(&mut self, intensity: Var, events: &[bool]) -> Result<Var> {
        if events.len() != self.value(intensity).len() {
            return Err(Error::input(format!(
                "event_log_likelihood: {} event cells for {} intensity cells",
                events.len(),
                self.value(intensity).len()
            )));
        }
        self.push(Op::EventLogLik {
            intensity,
            events: events.to_vec(),
        })
    }

    fn eval(&self, op: &Op) -> Result<(Vec<usize>, Vec<f64>)> {
        let val = |v: &Var| self.nodes[v.0].value.as_slice();
        let shp = |v: &Var| self.nodes[v.0].shape.clone();
        let map = |a: &Var, f: &dyn Fn(f64) -> f64| (shp(a), val(a).iter().map(|&x| f(x)).collect());
        let zip = |a: &Var, b: &Var, f: &dyn Fn(f64, f64) -> f64| {
            (shp(a), val(a).iter().zip(val(b)).map(|(&x, &y)| f(x, y)).collect())
        };
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => zip(a, b, &|x, y| x + y),
            Op::Sub(a, b) => zip(a, b, &|x, y| x - y),
            Op::Mul(a, b) => zip(a, b, &|x, y| x * y),
            Op::Sigmoid(a) => map(a, &sigmoid),
            Op::Tanh(a) => map(a, &f64::tanh),
            Op::Log(a) => {
                if let Some(i) = val(a).iter().position(|&x| x <= 0.0) {
                    return Err(Error::numeric(
                        "log",
                        format!("non-positive argument {} at entry {i}", val(a)[i]),
                    ));
                }
                map(a, &f64::ln)
            }
            Op::Softplus(a) => map(a, &softplus),
            Op::EluPlusOne(a) => map(a, &elu_plus_one),
            Op::BiasedRelu(a, eps) => map(a, &|x| eps + x.max(0.0)),
            Op::Scale(a, k) => map(a, &|x| k * x),
            Op::Sum(a) => (vec![1], vec![val(a).iter().sum()]),
            Op::Matmul(a, b) => {
                let (sa, sb) = (shp(a), shp(b));
                (vec![sa[0], sb[1]], kernels::matmul(val(a), val(b), sa[0], sa[1], sb[1]))
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => (
                vec![geometry.filters, geometry.out_height(), geometry.out_width()],
                kernels::conv2d_forward(geometry, val(input), val(kernel), bias.as_ref().map(val)),
            ),
            Op::AddRowBias(x, b) => {
                let xs = val(x);
                let bs = val(b);
                let inner = xs.len() / bs.len();
                (shp(x), xs.iter().enumerate().map(|(i, &v)| v + bs[i / inner]).collect())
            }
            Op::Concat(parts) => {
                let mut shape = shp(&parts[0]);
                shape[0] = parts.iter().map(|p| self.nodes[p.0].shape[0]).sum();
                let mut data = Vec::with_capacity(shape.iter().product());
                for p in parts {
                    data.extend_from_slice(val(p));
                }
                (shape, data)
            }
            Op::Narrow { input, start, len } => {
                let mut shape = shp(input);
                let inner = val(input).len() / shape[0];
                shape[0] = *len;
                (shape, val(input)[start * inner..(start + len) * inner].to_vec())
            }
            Op::Reshape(_) => unreachable!("reshape is recorded without evaluation"),
            Op::EventLogLik { intensity, events } => {
                let lam = val(intensity);
                let mut total = 0.0;
                for (i, (&l, &e)) in lam.iter().zip(events).enumerate() {
                    if e {
                        if l <= 0.0 {
                            return Err(Error::numeric(
                                "event_log_likelihood",
                                format!("intensity {l} at event cell {i}"),
                            ));
                        }
                        total += l.ln();
                    } else {
                        total -= l;
                    }
                }
                (vec![1], vec![total])
            }
        })
    }

    /// Recomputes every non-leaf node from its inputs and checks the stored
    /// value is reproduced bit for bit.
    pub fn replay_check(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let recomputed = match &node.op {
                Op::Leaf => continue,
                Op::Reshape(a) => self.nodes[a.0].value.clone(),
                op => self.eval(op)?.1,
            };
            let same = recomputed.len() == node.value.len()
                && recomputed
                    .iter()
                    .zip(&node.value)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::numeric(
                    node.op.name(),
                    format!("replay of node {i} differs from the recorded value"),
                ));
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar root. Consumes the record.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::input(format!(
                "backward: root has shape {:?}, expected a scalar",
                self.nodes[root.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Leaf if node.requires_grad => {
                    if grads[i].is_none() {
                        grads[i] = Some(vec![0.0; node.value.len()]);
                    }
                }
                _ => grads[i] = None,
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulator for an input, or None when it needs no gradient.
        fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }
        let out = &node.value;
        let accumulate = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(usize) -> f64| {
            if let Some(s) = slot(nodes, grads, v) {
                for (i, d) in s.iter_mut().enumerate() {
                    *d += f(i);
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, &|i| g[i]);
                accumulate(grads, *b, &|i| g[i]);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, &|i| g[i]);
                accumulate(grads, *b, &|i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                accumulate(grads, *a, &|i| g[i] * vb[i]);
                accumulate(grads, *b, &|i| g[i] * va[i]);
            }
            Op::Sigmoid(a) => accumulate(grads, *a, &|i| g[i] * out[i] * (1.0 - out[i])),
            Op::Tanh(a) => accumulate(grads, *a, &|i| g[i] * (1.0 - out[i] * out[i])),
            Op::Log(a) => {
                let va = &nodes[a.0].value;
                accumulate(grads, *a, &|i| g[i] / va[i]);
            }
            Op::Softplus(a) => {
                let va = &nodes[a.0].value;
                accumulate(grads, *a, &|i| g[i] * sigmoid(va[i]));
            }
            Op::EluPlusOne(a) => {
                let va = &nodes[a.0].value;
                accumulate(grads, *a, &|i| if va[i] >= 0.0 { g[i] } else { g[i] * out[i] });
            }
            Op::BiasedRelu(a, _) => {
                let va = &nodes[a.0].value;
                accumulate(grads, *a, &|i| if va[i] > 0.0 { g[i] } else { 0.0 });
            }
            Op::Scale(a, k) => accumulate(grads, *a, &|i| k * g[i]),
            Op::Sum(a) => accumulate(grads, *a, &|_| g[0]),
            Op::Matmul(a, b) => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = slot(nodes, grads, *a) {
                    kernels::matmul_grad_a(g, vb, m, k, n, ga);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    kernels::matmul_grad_b(g, va, m, k, n, gb);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let vi = &nodes[input.0].value;
                let vk = &nodes[kernel.0].value;
                // Take the three accumulators out so they can be borrowed together.
                let mut gi = slot(nodes, grads, *input).map(std::mem::take);
                let mut gk = slot(nodes, grads, *kernel).map(std::mem::take);
                let mut gb = bias.and_then(|b| slot(nodes, grads, b).map(std::mem::take));
                kernels::conv2d_backward(
                    geometry,
                    vi,
                    vk,
                    g,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gi {
                    grads[input.0] = Some(v);
                }
                if let Some(v) = gk {
                    grads[kernel.0] = Some(v);
                }
                if let (Some(b), Some(v)) = (bias, gb) {
                    grads[b.0] = Some(v);
                }
            }
            Op::AddRowBias(x, b) => {
                accumulate(grads, *x, &|i| g[i]);
                if let Some(s) = slot(nodes, grads, *b) {
                    let inner = g.len() / s.len();
                    for (f, d) in s.iter_mut().enumerate() {
                        *d += g[f * inner..(f + 1) * inner].iter().sum::<f64>();
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(s) = slot(nodes, grads, *p) {
                        for (d, v) in s.iter_mut().zip(&g[offset..offset + len]) {
                            *d += v;
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, start, .. } => {
                let inner = nodes[input.0].value.len() / nodes[input.0].shape[0];
                if let Some(s) = slot(nodes, grads, *input) {
                    for (d, v) in s[start * inner..].iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            Op::Reshape(a) => accumulate(grads, *a, &|i| g[i]),
            Op::EventLogLik { intensity, events } => {
                let lam = &nodes[intensity.0].value;
                accumulate(grads, *intensity, &|i| {
                    if events[i] {
                        g[0] / lam[i]
                    } else {
                        -g[0]
                    }
                });
            }
        }
    }
}
