use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a per-example quantity is folded into a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

/// Input values for `Input` placeholders, keyed by placeholder name.
pub type Bindings = BTreeMap<String, Tensor>;

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(String),
    Const,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    SoftmaxRows(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        reduction: Reduction,
    },
    SigmoidBce {
        logits: NodeId,
        targets: Vec<f64>,
        reduction: Reduction,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::Transpose(_) => "transpose",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanRows(_) => "mean_rows",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SigmoidBce { .. } => "sigmoid_bce",
        }
    }
}

/// Deliberate defects used by the self-test to prove the gradient checker
/// notices broken backward rules. Never set outside tests.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientFault {
    SkewTanh,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    leaf: Option<Tensor>,
    requires_grad: bool,
}

/// A recorded computation over dense tensors with reverse-mode gradients.
///
/// Nodes are appended in topological order by the builder methods, so the
/// graph is acyclic by construction. `evaluate` fills in every node value;
/// `gradients` then walks the nodes backwards from the designated loss.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
    loss: Option<NodeId>,
    values: Vec<Tensor>,
    bindings: Bindings,
    evaluated: bool,
    fault: Option<GradientFault>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, leaf: Option<Tensor>, requires_grad: bool) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: NodeId, make: impl FnOnce(NodeId) -> Op) -> NodeId {
        let rg = self.nodes[a.0].requires_grad;
        self.push(make(a), None, rg)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, make: impl FnOnce(NodeId, NodeId) -> Op) -> NodeId {
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(make(a, b), None, rg)
    }

    /// Placeholder bound by name at `evaluate` time.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), None, false)
    }

    /// Trainable leaf. Each name may be registered once; reuse the returned
    /// id to share the parameter between sub-computations.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        assert!(!self.params.contains_key(name), "parameter `{name}` registered twice");
        let id = self.push(Op::Param(name.to_string()), Some(value), true);
        self.params.insert(name.to_string(), id);
        id
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, Some(value), false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::MatMul)
    }

    /// Element-wise sum; `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.unary(a, |a| Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Transpose)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Op::ConcatCols(parts.to_vec()), None, rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Op::ConcatRows(parts.to_vec()), None, rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sum)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Mean)
    }

    pub fn reduce(&mut self, a: NodeId, reduction: Reduction) -> NodeId {
        match reduction {
            Reduction::Sum => self.sum(a),
            Reduction::Mean => self.mean(a),
        }
    }

    /// Column means of a matrix, as a `[1, cols]` row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::MeanRows)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::SoftmaxRows)
    }

    /// Softmax cross-entropy of `[n, C]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>, reduction: Reduction) -> NodeId {
        self.unary(logits, |logits| Op::SoftmaxCrossEntropy {
            logits,
            labels,
            reduction,
        })
    }

    /// Binary cross-entropy of sigmoid(logits) against targets in `[0, 1]`.
    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: Vec<f64>, reduction: Reduction) -> NodeId {
        self.unary(logits, |logits| Op::SigmoidBce {
            logits,
            targets,
            reduction,
        })
    }

    pub fn set_output(&mut self, name: &str, node: NodeId) {
        self.outputs.insert(name.to_string(), node);
    }

    /// Designates the scalar that `gradients` differentiates. It is also
    /// reported by `evaluate` under the name `loss`.
    pub fn set_loss(&mut self, node: NodeId) {
        self.loss = Some(node);
        self.outputs.insert("loss".to_string(), node);
    }

    pub fn loss_node(&self) -> Option<NodeId> {
        self.loss
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn param_value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|id| self.nodes[id.0].leaf.as_ref())
    }

    /// Replaces a parameter's value; the graph must be re-evaluated afterwards.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), NumError> {
        let id = *self
            .params
            .get(name)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))?;
        let node = &mut self.nodes[id.0];
        let old = node.leaf.as_ref().expect("param has a value");
        if old.shape() != value.shape() {
            return Err(NumError::ShapeMismatch {
                op: "set_param",
                left: format!("param `{name}` {:?}", old.shape()),
                right: format!("new value {:?}", value.shape()),
            });
        }
        node.leaf = Some(value);
        self.evaluated = false;
        Ok(())
    }

    /// Value of a node from the last successful `evaluate`.
    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        if self.evaluated {
            self.values.get(node.0)
        } else {
            None
        }
    }

    pub(crate) fn last_bindings(&self) -> &Bindings {
        &self.bindings
    }

    /// Names of the op kinds present in the graph.
    pub fn op_kinds(&self) -> std::collections::BTreeSet<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Smallest `|x|` fed into a non-smooth op (`relu`, `abs`) in the last
    /// evaluation; `None` if there are no such ops or the graph is stale.
    pub fn min_kink_distance(&self) -> Option<f64> {
        if !self.evaluated {
            return None;
        }
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) | Op::Abs(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.values[a.0].data().iter().map(|x| x.abs()))
            .reduce(f64::min)
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: GradientFault) {
        self.fault = Some(fault);
    }

    fn describe(&self, id: NodeId, values: &[Tensor]) -> String {
        let node = &self.nodes[id.0];
        let label = match &node.op {
            Op::Input(n) => format!("input `{n}`"),
            Op::Param(n) => format!("param `{n}`"),
            op => op.name().to_string(),
        };
        match values.get(id.0) {
            Some(v) => format!("node #{} ({label}) {:?}", id.0, v.shape()),
            None => format!("node #{} ({label})", id.0),
        }
    }

    /// Computes every node; returns the named outputs.
    pub fn evaluate(&mut self, bindings: &Bindings) -> Result<BTreeMap<String, Tensor>, NumError> {
        self.evaluated = false;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for idx in 0..self.nodes.len() {
            let v = self.forward_node(idx, &values, bindings)?;
            if let Some(pos) = v.data().iter().position(|x| !x.is_finite()) {
                return Err(NumError::Overflow {
                    node: self.describe(NodeId(idx), &values),
                    value: v.data()[pos],
                });
            }
            values.push(v);
        }
        self.values = values;
        self.bindings = bindings.clone();
        self.evaluated = true;
        Ok(self
            .outputs
            .iter()
            .map(|(k, id)| (k.clone(), self.values[id.0].clone()))
            .collect())
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId, values: &[Tensor]) -> NumError {
        NumError::ShapeMismatch {
            op,
            left: self.describe(a, values),
            right: self.describe(b, values),
        }
    }

    fn forward_node(&self, idx: usize, vals: &[Tensor], bindings: &Bindings) -> Result<Tensor, NumError> {
        let node = &self.nodes[idx];
        let out = match &node.op {
            Op::Input(name) => bindings
                .get(name)
                .cloned()
                .ok_or_else(|| NumError::UnboundInput(name.clone()))?,
            Op::Param(_) | Op::Const => node.leaf.clone().expect("leaf value"),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&vals[a.0], &vals[b.0]);
                let (r, k) = ta.dims();
                let (k2, c) = tb.dims();
                if k != k2 {
                    return Err(self.mismatch("matmul", *a, *b, vals));
                }
                let mut out = vec![0.0; r * c];
                let (da, db) = (ta.data(), tb.data());
                for i in 0..r {
                    let row = &mut out[i * c..(i + 1) * c];
                    for p in 0..k {
                        let x = da[i * k + p];
                        let brow = &db[p * c..(p + 1) * c];
                        for (o, y) in row.iter_mut().zip(brow) {
                            *o += x * y;
                        }
                    }
                }
                Tensor::from_parts(vec![r, c], out)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let f: fn(f64, f64) -> f64 = match &node.op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let (ta, tb) = (&vals[a.0], &vals[b.0]);
                let op = node.op.name();
                match broadcast_kind(ta, tb) {
                    Some(Broadcast::Same) => Tensor::from_parts(
                        ta.shape().to_vec(),
                        ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect(),
                    ),
                    Some(Broadcast::Row) => {
                        let (_, c) = ta.dims();
                        let bd = tb.data();
                        Tensor::from_parts(
                            ta.shape().to_vec(),
                            ta.data().iter().enumerate().map(|(i, x)| f(*x, bd[i % c])).collect(),
                        )
                    }
                    None => return Err(self.mismatch(op, *a, *b, vals)),
                }
            }
            Op::Scale(a, s) => map(&vals[a.0], |x| x * s),
            Op::Relu(a) => map(&vals[a.0], |x| if x > 0.0 { x } else { 0.0 }),
            Op::Tanh(a) => map(&vals[a.0], f64::tanh),
            Op::Sigmoid(a) => map(&vals[a.0], sigmoid),
            Op::Exp(a) => map(&vals[a.0], f64::exp),
            Op::Log(a) => map(&vals[a.0], f64::ln),
            Op::Abs(a) => map(&vals[a.0], f64::abs),
            Op::Transpose(a) => {
                let t = &vals[a.0];
                let (r, c) = t.dims();
                let d = t.data();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = d[i * c + j];
                    }
                }
                Tensor::from_parts(vec![c, r], out)
            }
            Op::ConcatCols(parts) => {
                let rows = vals[parts[0].0].dims().0;
                if let Some(bad) = parts.iter().find(|p| vals[p.0].dims().0 != rows) {
                    return Err(self.mismatch("concat_cols", parts[0], *bad, vals));
                }
                let total: usize = parts.iter().map(|p| vals[p.0].dims().1).sum();
                let mut out = Vec::with_capacity(rows * total);
                for i in 0..rows {
                    for p in parts {
                        out.extend_from_slice(vals[p.0].row(i));
                    }
                }
                Tensor::from_parts(vec![rows, total], out)
            }
            Op::ConcatRows(parts) => {
                let cols = vals[parts[0].0].dims().1;
                if let Some(bad) = parts.iter().find(|p| vals[p.0].dims().1 != cols) {
                    return Err(self.mismatch("concat_rows", parts[0], *bad, vals));
                }
                let mut out = Vec::new();
                let mut rows = 0;
                for p in parts {
                    rows += vals[p.0].dims().0;
                    out.extend_from_slice(vals[p.0].data());
                }
                Tensor::from_parts(vec![rows, cols], out)
            }
            Op::Sum(a) => Tensor::from_parts(vec![1], vec![sum_ordered(vals[a.0].data())]),
            Op::Mean(a) => {
                let d = vals[a.0].data();
                Tensor::from_parts(vec![1], vec![sum_ordered(d) / d.len() as f64])
            }
            Op::MeanRows(a) => {
                let t = &vals[a.0];
                let (r, c) = t.dims();
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, x) in out.iter_mut().zip(t.row(i)) {
                        *o += x;
                    }
                }
                out.iter_mut().for_each(|o| *o /= r as f64);
                Tensor::from_parts(vec![1, c], out)
            }
            Op::SoftmaxRows(a) => {
                let t = &vals[a.0];
                let (r, c) = t.dims();
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    out.extend(softmax(t.row(i)));
                }
                Tensor::from_parts(t.shape().to_vec(), out)
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                reduction,
            } => {
                let t = &vals[logits.0];
                let (r, c) = t.dims();
                if labels.len() != r {
                    return Err(NumError::LabelMismatch {
                        node: self.describe(*logits, vals),
                        labels: labels.len(),
                    });
                }
                let mut losses = Vec::with_capacity(r);
                for (i, &y) in labels.iter().enumerate() {
                    if y >= c {
                        return Err(NumError::LabelOutOfRange { label: y, classes: c });
                    }
                    let row = t.row(i);
                    losses.push(log_sum_exp(row) - row[y]);
                }
                Tensor::from_parts(vec![1], vec![reduce_vec(&losses, *reduction)])
            }
            Op::SigmoidBce {
                logits,
                targets,
                reduction,
            } => {
                let t = &vals[logits.0];
                if t.len() != targets.len() || t.dims().1 != 1 && t.dims().0 != 1 {
                    return Err(NumError::LabelMismatch {
                        node: self.describe(*logits, vals),
                        labels: targets.len(),
                    });
                }
                let losses: Vec<f64> = t
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                    .collect();
                Tensor::from_parts(vec![1], vec![reduce_vec(&losses, *reduction)])
            }
        };
        Ok(out)
    }

    /// Gradient of the loss with respect to every parameter, keyed by name.
    pub fn gradients(&self) -> Result<BTreeMap<String, Tensor>, NumError> {
        if !self.evaluated {
            return Err(NumError::NotEvaluated);
        }
        let loss = self.loss.ok_or(NumError::NoLoss)?;
        if self.values[loss.0].shape() != [1] {
            return Err(NumError::NotScalar(self.describe(loss, &self.values)));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let shape = self.values[id.0].shape().to_vec();
            let data = grads[id.0].take().unwrap_or_else(|| vec![0.0; self.values[id.0].len()]);
            out.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let vals = &self.values;
        let out = &vals[idx];
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; vals[id.0].len()]);
            f(slot);
        };
        match &self.nodes[idx].op {
            Op::Input(_) | Op::Param(_) | Op::Const => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&vals[a.0], &vals[b.0]);
                let (r, k) = ta.dims();
                let (_, c) = tb.dims();
                let (da, db) = (ta.data(), tb.data());
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let brow = &db[p * c..(p + 1) * c];
                            let mut s = 0.0;
                            for (x, y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        for p in 0..k {
                            let x = da[i * k + p];
                            let gbrow = &mut gb[p * c..(p + 1) * c];
                            for (o, y) in gbrow.iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (&vals[a.0], &vals[b.0]);
                let row = broadcast_kind(ta, tb) == Some(Broadcast::Row);
                let (_, c) = ta.dims();
                let bidx = |i: usize| if row { i % c } else { i };
                let (da, db) = (ta.data(), tb.data());
                match &self.nodes[idx].op {
                    Op::Add(..) => {
                        acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                        acc(*b, &mut |gb| g.iter().enumerate().for_each(|(i, x)| gb[bidx(i)] += x));
                    }
                    Op::Sub(..) => {
                        acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                        acc(*b, &mut |gb| g.iter().enumerate().for_each(|(i, x)| gb[bidx(i)] -= x));
                    }
                    _ => {
                        acc(*a, &mut |ga| {
                            for (i, x) in g.iter().enumerate() {
                                ga[i] += x * db[bidx(i)];
                            }
                        });
                        acc(*b, &mut |gb| {
                            for (i, x) in g.iter().enumerate() {
                                gb[bidx(i)] += x * da[i];
                            }
                        });
                    }
                }
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += s * x)),
            Op::Relu(a) => {
                let xa = vals[a.0].data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if xa[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Tanh(a) => {
                let skew = if self.fault == Some(GradientFault::SkewTanh) {
                    1.01
                } else {
                    1.0
                };
                let y = out.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += skew * g[i] * (1.0 - y[i] * y[i]);
                    }
                })
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                })
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i];
                    }
                })
            }
            Op::Log(a) => {
                let x = vals[a.0].data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / x[i];
                    }
                })
            }
            Op::Abs(a) => {
                let x = vals[a.0].data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        } else if x[i] < 0.0 {
                            ga[i] -= g[i];
                        }
                    }
                })
            }
            Op::Transpose(a) => {
                let (r, c) = vals[a.0].dims();
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims();
                let mut offset = 0;
                for p in parts {
                    let (_, pc) = vals[p.0].dims();
                    acc(*p, &mut |gp| {
                        for i in 0..rows {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * total + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = vals[p.0].len();
                    acc(*p, &mut |gp| {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, x)| *o += x)
                    });
                    offset += len;
                }
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = vals[a.0].len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n))
            }
            Op::MeanRows(a) => {
                let (r, c) = vals[a.0].dims();
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j] / r as f64;
                        }
                    }
                })
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = out.dims();
                let y = out.data();
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            ga[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                })
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                reduction,
            } => {
                let t = &vals[logits.0];
                let (r, c) = t.dims();
                let w = g[0] * reduction_weight(*reduction, r);
                acc(*logits, &mut |gl| {
                    for (i, &y) in labels.iter().enumerate() {
                        let p = softmax(t.row(i));
                        for j in 0..c {
                            let target = if j == y { 1.0 } else { 0.0 };
                            gl[i * c + j] += w * (p[j] - target);
                        }
                    }
                })
            }
            Op::SigmoidBce {
                logits,
                targets,
                reduction,
            } => {
                let t = &vals[logits.0];
                let w = g[0] * reduction_weight(*reduction, targets.len());
                acc(*logits, &mut |gl| {
                    for (i, (&x, &y)) in t.data().iter().zip(targets).enumerate() {
                        gl[i] += w * (sigmoid(x) - y);
                    }
                })
            }
        }
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.nodes.len() {
            let vals: &[Tensor] = if self.evaluated { &self.values } else { &[] };
            writeln!(f, "{}", self.describe(NodeId(i), vals))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
}

fn broadcast_kind(a: &Tensor, b: &Tensor) -> Option<Broadcast> {
    if a.shape() == b.shape() {
        return Some(Broadcast::Same);
    }
    let (_, ac) = a.dims();
    let (br, bc) = b.dims();
    if a.shape().len() == 2 && br == 1 && bc == ac {
        Some(Broadcast::Row)
    } else {
        None
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

/// Left-to-right accumulation; kept explicit so reductions are reproducible.
pub(crate) fn sum_ordered(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s
}

fn reduce_vec(xs: &[f64], reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum_ordered(xs),
        Reduction::Mean => sum_ordered(xs) / xs.len() as f64,
    }
}

fn reduction_weight(reduction: Reduction, n: usize) -> f64 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + sum_ordered(&row.iter().map(|x| (x - m).exp()).collect::<Vec<_>>()).ln()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s = sum_ordered(&e);
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::scalar(v).unwrap()
    }

    #[test]
    fn square_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", scalar(3.0));
        let y = g.mul(x, x);
        g.set_loss(y);
        let out = g.evaluate(&Bindings::new()).unwrap();
        assert_eq!(out["loss"].item(), 9.0);
        assert_eq!(g.gradients().unwrap()["x"].item(), 6.0);
    }

    #[test]
    fn scaled_input_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", scalar(-1.3));
        let y = g.scale(x, 2.5);
        g.set_loss(y);
        g.evaluate(&Bindings::new()).unwrap();
        assert_eq!(g.gradients().unwrap()["x"].item(), 2.5);
    }

    #[test]
    fn uniform_softmax_cross_entropy_is_ln3() {
        let mut g = Graph::new();
        let l = g.param("l", Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let ce = g.softmax_cross_entropy(l, vec![1], Reduction::Mean);
        g.set_loss(ce);
        let out = g.evaluate(&Bindings::new()).unwrap();
        assert!((out["loss"].item() - 3.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_bce_at_zero_is_ln2() {
        let mut g = Graph::new();
        let l = g.param("l", Tensor::vector(vec![0.0]).unwrap());
        let bce = g.sigmoid_bce(l, vec![1.0], Reduction::Mean);
        g.set_loss(bce);
        let out = g.evaluate(&Bindings::new()).unwrap();
        assert!((out["loss"].item() - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param("x", scalar(0.0));
        let r = g.relu(x);
        g.set_loss(r);
        g.evaluate(&Bindings::new()).unwrap();
        assert_eq!(g.gradients().unwrap()["x"].item(), 0.0);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_nodes() {
        let mut g = Graph::new();
        let a = g.param("a", Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let b = g.param("b", Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        g.matmul(a, b);
        let err = g.evaluate(&Bindings::new()).unwrap_err();
        match err {
            NumError::ShapeMismatch { op, left, right } => {
                assert_eq!(op, "matmul");
                assert!(left.contains("param `a`"), "{left}");
                assert!(right.contains("param `b`"), "{right}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overflow_is_flagged() {
        let mut g = Graph::new();
        let x = g.param("x", scalar(1000.0));
        let e = g.exp(x);
        g.set_loss(e);
        assert!(matches!(g.evaluate(&Bindings::new()), Err(NumError::Overflow { .. })));
        let mut g = Graph::new();
        let x = g.param("x", scalar(-1.0));
        g.log(x);
        assert!(matches!(g.evaluate(&Bindings::new()), Err(NumError::Overflow { .. })));
    }

    #[test]
    fn gradients_require_evaluation() {
        let mut g = Graph::new();
        let x = g.param("x", scalar(1.0));
        g.set_loss(x);
        assert!(matches!(g.gradients(), Err(NumError::NotEvaluated)));
    }

    #[test]
    fn unbound_input_is_an_error() {
        let mut g = Graph::new();
        let x = g.input("x");
        g.set_loss(x);
        assert!(matches!(g.evaluate(&Bindings::new()), Err(NumError::UnboundInput(_))));
        let mut b = Bindings::new();
        b.insert("x".into(), scalar(4.0));
        assert_eq!(g.evaluate(&b).unwrap()["loss"].item(), 4.0);
    }

    #[test]
    fn row_broadcast_add_accumulates_bias_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let b = g.param("b", Tensor::vector(vec![0.5, -0.5]).unwrap());
        let y = g.add(x, b);
        let s = g.sum(y);
        g.set_loss(s);
        let out = g.evaluate(&Bindings::new()).unwrap();
        assert_eq!(out["loss"].item(), 21.0);
        assert_eq!(g.gradients().unwrap()["b"].data(), &[3.0, 3.0]);
    }

    #[test]
    fn label_out_of_range() {
        let mut g = Graph::new();
        let l = g.param("l", Tensor::matrix(1, 2, vec![0.0; 2]).unwrap());
        g.softmax_cross_entropy(l, vec![2], Reduction::Mean);
        assert!(matches!(
            g.evaluate(&Bindings::new()),
            Err(NumError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }
}
