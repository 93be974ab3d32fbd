//! The computation tape: a flat list of primitive ops recorded per
//! evaluation. Each primitive knows three things: its value, how a tangent
//! propagates through it (dual-number rule), and how an adjoint pulls back
//! (reverse rule). Forward evaluation, directional derivatives, and
//! gradients all share the same op definitions.

use crate::error::{CoreError, Result};
use crate::layout::ParamLayout;
use crate::tensor::Tensor;

pub type NodeId = usize;

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param { offset: usize },
    Affine,
    Relu,
    Tanh,
    Gelu,
    Softmax,
    LayerNorm { eps: f64 },
    Add,
    Mul,
    Mean,
    Concat,
    Slice { start: usize, len: usize },
    L2Normalize,
    CrossEntropy { target: usize },
    SquaredError,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param { .. } => "param",
            Op::Affine => "affine",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Gelu => "gelu",
            Op::Softmax => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Mean => "mean",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::L2Normalize => "l2_normalize",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SquaredError => "squared_error",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    tangent: Option<Tensor>,
}

/// A single-use recording of a computation at fixed parameter values.
///
/// Constructed in primal mode (`new`) or dual mode (`with_direction`), in
/// which every node also carries the directional derivative of its value
/// along the given parameter direction.
pub struct Tape<'p> {
    layout: &'p ParamLayout,
    params: &'p [f64],
    direction: Option<&'p [f64]>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(layout: &'p ParamLayout, params: &'p [f64]) -> Self {
        Tape { layout, params, direction: None, nodes: Vec::new() }
    }

    pub fn with_direction(layout: &'p ParamLayout, params: &'p [f64], direction: &'p [f64]) -> Self {
        Tape { layout, params, direction: Some(direction), nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn tangent(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].tangent.as_ref()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, tangent: Option<Tensor>) -> Result<NodeId> {
        if !value.data().iter().all(|v| v.is_finite()) {
            return Err(CoreError::Numeric(format!("non-finite value produced by {}", op.name())));
        }
        if let Some(t) = &tangent {
            if !t.data().iter().all(|v| v.is_finite()) {
                return Err(CoreError::Numeric(format!("non-finite tangent produced by {}", op.name())));
            }
        }
        self.nodes.push(Node { op, inputs, value, tangent });
        Ok(self.nodes.len() - 1)
    }

    fn zero_tangent(&self, shape: &[usize]) -> Option<Tensor> {
        self.direction.map(|_| Tensor::zeros(shape.to_vec()))
    }

    fn rank1(&self, id: NodeId, op: &str) -> Result<usize> {
        let s = self.nodes[id].value.shape();
        if s.len() != 1 {
            return Err(CoreError::Contract(format!("{op} expects a rank-1 input, got shape {s:?}")));
        }
        Ok(s[0])
    }

    /// A constant leaf; contributes no gradient and a zero tangent.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        let tangent = self.zero_tangent(value.shape());
        self.push(Op::Const, vec![], value, tangent)
    }

    /// A parameter leaf, loaded from the layout entry with this name.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let entry = self.layout.entry(name)?;
        let range = entry.offset..entry.offset + entry.len();
        let value = Tensor::new(entry.shape.clone(), self.params[range.clone()].to_vec())?;
        let tangent = match self.direction {
            Some(d) => Some(Tensor::new(entry.shape.clone(), d[range].to_vec())?),
            None => None,
        };
        self.push(Op::Param { offset: entry.offset }, vec![], value, tangent)
    }

    /// Dense affine map `w x + b` with `w: [m, n]`, `b: [m]`, `x: [n]`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let ws = self.nodes[w].value.shape().to_vec();
        let n_x = self.rank1(x, "affine input")?;
        let n_b = self.rank1(b, "affine bias")?;
        if ws.len() != 2 || ws[1] != n_x || ws[0] != n_b {
            return Err(CoreError::Contract(format!(
                "affine shape mismatch: w {ws:?}, b [{n_b}], x [{n_x}]"
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = self.nodes[w].value.data();
        let bv = self.nodes[b].value.data();
        let xv = self.nodes[x].value.data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            let mut acc = bv[i];
            for j in 0..n {
                acc += row[j] * xv[j];
            }
            out[i] = acc;
        }
        let tangent = if self.direction.is_some() {
            let wd = self.nodes[w].tangent.as_ref().unwrap().data();
            let bd = self.nodes[b].tangent.as_ref().unwrap().data();
            let xd = self.nodes[x].tangent.as_ref().unwrap().data();
            let mut dt = vec![0.0; m];
            for i in 0..m {
                let row = &wv[i * n..(i + 1) * n];
                let drow = &wd[i * n..(i + 1) * n];
                let mut acc = bd[i];
                for j in 0..n {
                    acc += drow[j] * xv[j] + row[j] * xd[j];
                }
                dt[i] = acc;
            }
            Some(Tensor::new(vec![m], dt)?)
        } else {
            None
        };
        self.push(Op::Affine, vec![w, b, x], Tensor::new(vec![m], out)?, tangent)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.nodes[x].value.clone();
        let out: Vec<f64> = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let tangent = self.nodes[x].tangent.as_ref().map(|t| {
            let d: Vec<f64> = xv
                .data()
                .iter()
                .zip(t.data())
                .map(|(&v, &dv)| if v > 0.0 { dv } else { 0.0 })
                .collect();
            Tensor::new(xv.shape().to_vec(), d)
        });
        let tangent = tangent.transpose()?;
        self.push(Op::Relu, vec![x], Tensor::new(xv.shape().to_vec(), out)?, tangent)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.nodes[x].value.clone();
        let out: Vec<f64> = xv.data().iter().map(|v| v.tanh()).collect();
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => {
                let d: Vec<f64> =
                    out.iter().zip(t.data()).map(|(&y, &dv)| (1.0 - y * y) * dv).collect();
                Some(Tensor::new(xv.shape().to_vec(), d)?)
            }
            None => None,
        };
        self.push(Op::Tanh, vec![x], Tensor::new(xv.shape().to_vec(), out)?, tangent)
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.nodes[x].value.clone();
        let out: Vec<f64> = xv.data().iter().map(|&v| gelu_value(v)).collect();
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => {
                let d: Vec<f64> =
                    xv.data().iter().zip(t.data()).map(|(&v, &dv)| gelu_deriv(v) * dv).collect();
                Some(Tensor::new(xv.shape().to_vec(), d)?)
            }
            None => None,
        };
        self.push(Op::Gelu, vec![x], Tensor::new(xv.shape().to_vec(), out)?, tangent)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.rank1(x, "softmax")?;
        let xv = self.nodes[x].value.data().to_vec();
        let out = softmax_value(&xv);
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => {
                let s: f64 = out.iter().zip(t.data()).map(|(y, d)| y * d).sum();
                let d: Vec<f64> = out.iter().zip(t.data()).map(|(y, dv)| y * (dv - s)).collect();
                Some(Tensor::new(vec![n], d)?)
            }
            None => None,
        };
        self.push(Op::Softmax, vec![x], Tensor::new(vec![n], out)?, tangent)
    }

    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let n = self.rank1(x, "layer_norm")?;
        if n < 2 {
            return Err(CoreError::Contract("layer_norm needs at least 2 elements".into()));
        }
        let xv = self.nodes[x].value.data().to_vec();
        let (out, sigma) = layer_norm_value(&xv, eps);
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => {
                let td = t.data();
                let m1 = mean(td);
                let m2 = out.iter().zip(td).map(|(y, d)| y * d).sum::<f64>() / n as f64;
                let d: Vec<f64> =
                    out.iter().zip(td).map(|(y, dv)| (dv - m1 - y * m2) / sigma).collect();
                Some(Tensor::new(vec![n], d)?)
            }
            None => None,
        };
        self.push(Op::LayerNorm { eps }, vec![x], Tensor::new(vec![n], out)?, tangent)
    }

    fn broadcast_shapes(&self, a: NodeId, b: NodeId, op: &str) -> Result<Vec<usize>> {
        let sa = self.nodes[a].value.shape();
        let sb = self.nodes[b].value.shape();
        if sa == sb {
            Ok(sa.to_vec())
        } else if self.nodes[a].value.is_scalar() {
            Ok(sb.to_vec())
        } else if self.nodes[b].value.is_scalar() {
            Ok(sa.to_vec())
        } else {
            Err(CoreError::Contract(format!("{op} shape mismatch: {sa:?} vs {sb:?}")))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shapes(a, b, "add")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let out = zip_broadcast(av, bv, |x, y| x + y);
        let tangent = match (&self.nodes[a].tangent, &self.nodes[b].tangent) {
            (Some(ta), Some(tb)) => Some(Tensor::new(shape.clone(), zip_broadcast(ta.data(), tb.data(), |x, y| x + y))?),
            _ => None,
        };
        self.push(Op::Add, vec![a, b], Tensor::new(shape, out)?, tangent)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.broadcast_shapes(a, b, "mul")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let out = zip_broadcast(av, bv, |x, y| x * y);
        let tangent = match (&self.nodes[a].tangent, &self.nodes[b].tangent) {
            (Some(ta), Some(tb)) => {
                let lhs = zip_broadcast(ta.data(), bv, |x, y| x * y);
                let rhs = zip_broadcast(av, tb.data(), |x, y| x * y);
                let d = lhs.iter().zip(&rhs).map(|(x, y)| x + y).collect();
                Some(Tensor::new(shape.clone(), d)?)
            }
            _ => None,
        };
        self.push(Op::Mul, vec![a, b], Tensor::new(shape, out)?, tangent)
    }

    /// Mean over all elements, producing a scalar tensor.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.nodes[x].value.data();
        if xv.is_empty() {
            return Err(CoreError::Contract("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(mean(xv))?;
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => Some(Tensor::scalar(mean(t.data()))?),
            None => None,
        };
        self.push(Op::Mean, vec![x], out, tangent)
    }

    /// Concatenate rank-1 tensors in order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(CoreError::Contract("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            self.rank1(p, "concat")?;
            data.extend_from_slice(self.nodes[p].value.data());
        }
        let tangent = if self.direction.is_some() {
            let mut d = Vec::new();
            for &p in parts {
                d.extend_from_slice(self.nodes[p].tangent.as_ref().unwrap().data());
            }
            Some(Tensor::vector(d)?)
        } else {
            None
        };
        self.push(Op::Concat, parts.to_vec(), Tensor::vector(data)?, tangent)
    }

    /// A contiguous window of a rank-1 tensor.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.rank1(x, "slice")?;
        if start + len > n || len == 0 {
            return Err(CoreError::Contract(format!("slice {start}..{} out of range for [{n}]", start + len)));
        }
        let value = Tensor::vector(self.nodes[x].value.data()[start..start + len].to_vec())?;
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => Some(Tensor::vector(t.data()[start..start + len].to_vec())?),
            None => None,
        };
        self.push(Op::Slice { start, len }, vec![x], value, tangent)
    }

    /// Scale a rank-1 tensor to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.rank1(x, "l2_normalize")?;
        let xv = self.nodes[x].value.data();
        let r = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < 1e-12 {
            return Err(CoreError::Numeric("l2_normalize of a near-zero vector".into()));
        }
        let out: Vec<f64> = xv.iter().map(|v| v / r).collect();
        let tangent = match self.nodes[x].tangent.as_ref() {
            Some(t) => {
                let s: f64 = out.iter().zip(t.data()).map(|(y, d)| y * d).sum();
                let d: Vec<f64> = out.iter().zip(t.data()).map(|(y, dv)| (dv - y * s) / r).collect();
                Some(Tensor::new(vec![n], d)?)
            }
            None => None,
        };
        self.push(Op::L2Normalize, vec![x], Tensor::new(vec![n], out)?, tangent)
    }

    /// Cross-entropy of logits against a class index, via a stable
    /// log-sum-exp. Produces a scalar.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let n = self.rank1(logits, "cross_entropy")?;
        if target >= n {
            return Err(CoreError::Contract(format!("target class {target} out of range for {n} logits")));
        }
        let zv = self.nodes[logits].value.data();
        let m = zv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + zv.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - zv[target])?;
        let tangent = match self.nodes[logits].tangent.as_ref() {
            Some(t) => {
                let p = softmax_value(zv);
                let d: f64 = p.iter().zip(t.data()).map(|(pi, di)| pi * di).sum::<f64>() - t.data()[target];
                Some(Tensor::scalar(d)?)
            }
            None => None,
        };
        self.push(Op::CrossEntropy { target }, vec![logits], value, tangent)
    }

    /// Mean squared error between a prediction and a target tensor of the
    /// same shape. Produces a scalar.
    pub fn squared_error(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let sp = self.nodes[pred].value.shape();
        let st = self.nodes[target].value.shape();
        if sp != st {
            return Err(CoreError::Contract(format!("squared_error shape mismatch: {sp:?} vs {st:?}")));
        }
        let pv = self.nodes[pred].value.data();
        let tv = self.nodes[target].value.data();
        let n = pv.len() as f64;
        let value = Tensor::scalar(pv.iter().zip(tv).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)?;
        let tangent = match (&self.nodes[pred].tangent, &self.nodes[target].tangent) {
            (Some(tp), Some(tt)) => {
                let d: f64 = pv
                    .iter()
                    .zip(tv)
                    .zip(tp.data().iter().zip(tt.data()))
                    .map(|((p, t), (dp, dt))| 2.0 * (p - t) * (dp - dt))
                    .sum::<f64>()
                    / n;
                Some(Tensor::scalar(d)?)
            }
            _ => None,
        };
        self.push(Op::SquaredError, vec![pred, target], value, tangent)
    }

    /// Reverse pass: the gradient of `cotangent . root` with respect to the
    /// full parameter vector. `cotangent` must match the root's shape.
    pub fn backward(&self, root: NodeId, cotangent: &Tensor) -> Result<Vec<f64>> {
        if cotangent.shape() != self.nodes[root].value.shape() {
            return Err(CoreError::Contract(format!(
                "cotangent shape {:?} does not match output shape {:?}",
                cotangent.shape(),
                self.nodes[root].value.shape()
            )));
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[root] = Some(cotangent.data().to_vec());
        let mut grad = vec![0.0; self.layout.total_len()];

        for idx in (0..=root).rev() {
            let adj = match adjoints[idx].take() {
                Some(a) => a,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param { offset } => {
                    let g = &mut grad[*offset..*offset + adj.len()];
                    for (gi, ai) in g.iter_mut().zip(&adj) {
                        *gi += ai;
                    }
                }
                Op::Affine => {
                    let (w, b, x) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                    let wv = self.nodes[w].value.data();
                    let xv = self.nodes[x].value.data();
                    let (m, n) = (self.nodes[b].value.len(), xv.len());
                    let aw = acc(&mut adjoints, w, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            aw[i * n + j] += adj[i] * xv[j];
                        }
                    }
                    let ab = acc(&mut adjoints, b, m);
                    for i in 0..m {
                        ab[i] += adj[i];
                    }
                    let ax = acc(&mut adjoints, x, n);
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += wv[i * n + j] * adj[i];
                        }
                        ax[j] += s;
                    }
                }
                Op::Relu => {
                    let x = node.inputs[0];
                    let xv = self.nodes[x].value.data();
                    let ax = acc(&mut adjoints, x, xv.len());
                    for (i, &v) in xv.iter().enumerate() {
                        if v > 0.0 {
                            ax[i] += adj[i];
                        }
                    }
                }
                Op::Tanh => {
                    let x = node.inputs[0];
                    let yv = node.value.data();
                    let ax = acc(&mut adjoints, x, yv.len());
                    for (i, &y) in yv.iter().enumerate() {
                        ax[i] += (1.0 - y * y) * adj[i];
                    }
                }
                Op::Gelu => {
                    let x = node.inputs[0];
                    let xv = self.nodes[x].value.data();
                    let ax = acc(&mut adjoints, x, xv.len());
                    for (i, &v) in xv.iter().enumerate() {
                        ax[i] += gelu_deriv(v) * adj[i];
                    }
                }
                Op::Softmax => {
                    let x = node.inputs[0];
                    let yv = node.value.data();
                    let s: f64 = yv.iter().zip(&adj).map(|(y, a)| y * a).sum();
                    let ax = acc(&mut adjoints, x, yv.len());
                    for (i, &y) in yv.iter().enumerate() {
                        ax[i] += y * (adj[i] - s);
                    }
                }
                Op::LayerNorm { eps } => {
                    let x = node.inputs[0];
                    let xv = self.nodes[x].value.data();
                    let yv = node.value.data();
                    let n = xv.len() as f64;
                    let (_, sigma) = layer_norm_value(xv, *eps);
                    let m1 = mean(&adj);
                    let m2: f64 = yv.iter().zip(&adj).map(|(y, a)| y * a).sum::<f64>() / n;
                    let ax = acc(&mut adjoints, x, xv.len());
                    for (i, &y) in yv.iter().enumerate() {
                        ax[i] += (adj[i] - m1 - y * m2) / sigma;
                    }
                }
                Op::Add => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    for &side in &[a, b] {
                        let len = self.nodes[side].value.len();
                        let aa = acc(&mut adjoints, side, len);
                        if len == adj.len() {
                            for (x, y) in aa.iter_mut().zip(&adj) {
                                *x += y;
                            }
                        } else {
                            aa[0] += adj.iter().sum::<f64>();
                        }
                    }
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let av = self.nodes[a].value.data().to_vec();
                    let bv = self.nodes[b].value.data().to_vec();
                    mul_backward(&mut adjoints, a, &av, &bv, &adj);
                    mul_backward(&mut adjoints, b, &bv, &av, &adj);
                }
                Op::Mean => {
                    let x = node.inputs[0];
                    let len = self.nodes[x].value.len();
                    let k = adj[0] / len as f64;
                    let ax = acc(&mut adjoints, x, len);
                    for v in ax.iter_mut() {
                        *v += k;
                    }
                }
                Op::Concat => {
                    let mut off = 0;
                    for &p in node.inputs.clone().iter() {
                        let len = self.nodes[p].value.len();
                        let ap = acc(&mut adjoints, p, len);
                        for (x, y) in ap.iter_mut().zip(&adj[off..off + len]) {
                            *x += y;
                        }
                        off += len;
                    }
                }
                Op::Slice { start, len } => {
                    let x = node.inputs[0];
                    let n = self.nodes[x].value.len();
                    let ax = acc(&mut adjoints, x, n);
                    for i in 0..*len {
                        ax[start + i] += adj[i];
                    }
                }
                Op::L2Normalize => {
                    let x = node.inputs[0];
                    let xv = self.nodes[x].value.data();
                    let yv = node.value.data();
                    let r = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let s: f64 = yv.iter().zip(&adj).map(|(y, a)| y * a).sum();
                    let ax = acc(&mut adjoints, x, xv.len());
                    for (i, &y) in yv.iter().enumerate() {
                        ax[i] += (adj[i] - y * s) / r;
                    }
                }
                Op::CrossEntropy { target } => {
                    let z = node.inputs[0];
                    let zv = self.nodes[z].value.data();
                    let p = softmax_value(zv);
                    let az = acc(&mut adjoints, z, zv.len());
                    for (i, pi) in p.iter().enumerate() {
                        let delta = if i == *target { 1.0 } else { 0.0 };
                        az[i] += (pi - delta) * adj[0];
                    }
                }
                Op::SquaredError => {
                    let (pr, tg) = (node.inputs[0], node.inputs[1]);
                    let pv = self.nodes[pr].value.data().to_vec();
                    let tv = self.nodes[tg].value.data().to_vec();
                    let n = pv.len() as f64;
                    let ap = acc(&mut adjoints, pr, pv.len());
                    for i in 0..pv.len() {
                        ap[i] += adj[0] * 2.0 * (pv[i] - tv[i]) / n;
                    }
                    let at = acc(&mut adjoints, tg, tv.len());
                    for i in 0..tv.len() {
                        at[i] -= adj[0] * 2.0 * (pv[i] - tv[i]) / n;
                    }
                }
            }
        }

        if !grad.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Numeric("non-finite gradient in reverse pass".into()));
        }
        Ok(grad)
    }
}

fn acc<'a>(adjoints: &'a mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'a mut Vec<f64> {
    adjoints[id].get_or_insert_with(|| vec![0.0; len])
}

fn mul_backward(adjoints: &mut [Option<Vec<f64>>], side: NodeId, own: &[f64], other: &[f64], adj: &[f64]) {
    let aa = acc(adjoints, side, own.len());
    if own.len() == adj.len() {
        // other is either the same length or a broadcast scalar
        for i in 0..adj.len() {
            let o = if other.len() == 1 { other[0] } else { other[i] };
            aa[i] += adj[i] * o;
        }
    } else {
        // own is the broadcast scalar
        let mut s = 0.0;
        for i in 0..adj.len() {
            s += adj[i] * other[i];
        }
        aa[0] += s;
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Elementwise combine with scalar broadcast on either side; lengths are
/// validated upstream in `broadcast_shapes`.
fn zip_broadcast(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
    } else if a.len() == 1 {
        b.iter().map(|y| f(a[0], *y)).collect()
    } else {
        a.iter().map(|x| f(*x, b[0])).collect()
    }
}

fn softmax_value(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn layer_norm_value(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let mu = mean(x);
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64;
    let sigma = (var + eps).sqrt();
    (x.iter().map(|v| (v - mu) / sigma).collect(), sigma)
}

fn gelu_value(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    let du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::LayoutBuilder;

    #[test]
    fn affine_matches_hand_computation() {
        let mut b = LayoutBuilder::new();
        b.add("w", &[2, 3]).unwrap();
        b.add("b", &[2]).unwrap();
        let layout = b.build();
        let params = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5];
        let mut tape = Tape::new(&layout, &params);
        let w = tape.param("w").unwrap();
        let bb = tape.param("b").unwrap();
        let x = tape.constant(Tensor::vector(vec![1.0, -1.0, 2.0]).unwrap()).unwrap();
        let y = tape.affine(w, bb, x).unwrap();
        // rows: [1,2,3]·[1,-1,2] + 0.5 = 5.5 ; [4,5,6]·[1,-1,2] - 0.5 = 10.5
        assert_eq!(tape.value(y).data(), &[5.5, 10.5]);
    }

    #[test]
    fn non_finite_aborts() {
        let layout = LayoutBuilder::new().build();
        let params: Vec<f64> = vec![];
        let mut tape = Tape::new(&layout, &params);
        let x = tape.constant(Tensor::vector(vec![1e308, 1e308]).unwrap()).unwrap();
        let err = tape.mul(x, x).unwrap_err();
        assert!(matches!(err, CoreError::Numeric(_)));
    }

    #[test]
    fn cross_entropy_target_bounds() {
        let layout = LayoutBuilder::new().build();
        let params: Vec<f64> = vec![];
        let mut tape = Tape::new(&layout, &params);
        let z = tape.constant(Tensor::vector(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!(tape.cross_entropy(z, 2).is_err());
    }
}
