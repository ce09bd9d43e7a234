//! Reverse-mode differentiation on a per-instance tape.
//!
//! The forward pass appends primitive operations to a [`Tape`], caching each
//! node's value. [`Tape::backward`] replays the tape in reverse once,
//! accumulating exact gradients; gradients of parameter leaves are then
//! harvested in registration order. Tapes are rebuilt per instance
//! (define-by-run) since sequence lengths and segment counts vary.

use crate::error::{Error, Result};
use crate::numerics;
use std::collections::HashMap;

/// Index of a node on a tape. Valid only for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Index of a learnable tensor in a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must equal the product of its shape"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// W·x + b with W: [m,n], x: [n], b: [m].
    Affine { w: NodeId, x: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    /// Elementwise product of same-shape tensors.
    Mul { a: NodeId, b: NodeId },
    /// Elementwise sum of same-shape tensors.
    Add { a: NodeId, b: NodeId },
    /// 1-d concatenation.
    Concat { xs: Vec<NodeId> },
    /// Row extraction from a [r,c] matrix.
    Lookup { table: NodeId, row: usize },
    /// Inner product of same-length vectors.
    Dot { a: NodeId, b: NodeId },
    /// log Σ exp over scalar inputs.
    LogSumExp { xs: Vec<NodeId> },
    /// n-ary sum of same-shape tensors.
    Sum { xs: Vec<NodeId> },
    /// Scalar extraction from a vector.
    Pick { x: NodeId, index: usize },
    AddConst { x: NodeId },
    Scale { x: NodeId, c: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A Wengert tape: ordered primitive ops with cached forward values.
///
/// Every node's inputs precede it, so one reverse sweep visits each node
/// exactly once. All iteration is in index order, which makes repeated
/// forward+backward passes bit-identical.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    /// Parameter leaves in registration order.
    param_nodes: Vec<(ParamId, NodeId)>,
    param_lookup: HashMap<ParamId, NodeId>,
    /// Verification hook: scales the tanh backward rule so gradient checks
    /// can demonstrate a deliberately broken rule fails. Never set in
    /// normal operation.
    corrupt_tanh: Option<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: Vec::new(),
            param_lookup: HashMap::new(),
            corrupt_tanh: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Negative-control hook for gradient checking: multiplies the tanh
    /// backward rule by `factor`.
    pub fn corrupt_tanh_backward(&mut self, factor: f64) {
        self.corrupt_tanh = Some(factor);
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let t = &self.nodes[id.0].value;
        debug_assert!(t.is_scalar());
        t.data[0]
    }

    /// Gradient of the last `backward` root w.r.t. this node, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Constant (non-learnable) input node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar_leaf(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    /// Learnable leaf. Memoized: registering the same parameter twice on one
    /// tape returns the same node, so gradients from all uses accumulate.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> NodeId {
        if let Some(&n) = self.param_lookup.get(&id) {
            return n;
        }
        let n = self.push(Op::Leaf, value.clone());
        self.param_nodes.push((id, n));
        self.param_lookup.insert(id, n);
        n
    }

    /// Parameter leaves with their accumulated gradients, in registration
    /// order. Leaves no gradient reached yield zeros.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.param_nodes
            .iter()
            .map(|&(pid, nid)| {
                let g = match &self.grads[nid.0] {
                    Some(g) => g.clone(),
                    None => vec![0.0; self.nodes[nid.0].value.numel()],
                };
                (pid, g)
            })
            .collect()
    }

    fn shape_err(op: &'static str, detail: String) -> Error {
        Error::ShapeMismatch { op, detail }
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (ws, xs, bs) = (
            self.nodes[w.0].value.shape.clone(),
            self.nodes[x.0].value.shape.clone(),
            self.nodes[b.0].value.shape.clone(),
        );
        if ws.len() != 2 || xs.len() != 1 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Self::shape_err(
                "affine",
                format!("W {ws:?}, x {xs:?}, b {bs:?}"),
            ));
        }
        let (m, n) = (ws[0], ws[1]);
        let wd = &self.nodes[w.0].value.data;
        let xd = &self.nodes[x.0].value.data;
        let bd = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; m];
        for r in 0..m {
            let mut acc = 0.0;
            let row = &wd[r * n..(r + 1) * n];
            for c in 0..n {
                acc += row[c] * xd[c];
            }
            out[r] = acc + bd[r];
        }
        Ok(self.push(Op::Affine { w, x, b }, Tensor::vector(out)))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.data.iter().map(|v| v.tanh()).collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Op::Tanh { x }, Tensor::new(shape, out))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .data
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Op::Sigmoid { x }, Tensor::new(shape, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("elementwise_mul", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Op::Mul { a, b }, Tensor::new(shape, out)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Op::Add { a, b }, Tensor::new(shape, out)))
    }

    /// a − b, built from scale and add.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa != sb {
            return Err(Self::shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Self::shape_err("concat", "no inputs".into()));
        }
        let mut out = Vec::new();
        for &x in xs {
            let t = &self.nodes[x.0].value;
            if t.shape.len() != 1 {
                return Err(Self::shape_err(
                    "concat",
                    format!("expected vectors, got {:?}", t.shape),
                ));
            }
            out.extend_from_slice(&t.data);
        }
        Ok(self.push(Op::Concat { xs: xs.to_vec() }, Tensor::vector(out)))
    }

    pub fn lookup(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let s = self.nodes[table.0].value.shape.clone();
        if s.len() != 2 || row >= s[0] {
            return Err(Self::shape_err(
                "lookup",
                format!("table {s:?}, row {row}"),
            ));
        }
        let c = s[1];
        let out = self.nodes[table.0].value.data[row * c..(row + 1) * c].to_vec();
        Ok(self.push(Op::Lookup { table, row }, Tensor::vector(out)))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa.len() != 1 || sa != sb {
            return Err(Self::shape_err("dot", format!("{sa:?} vs {sb:?}")));
        }
        let mut acc = 0.0;
        for (x, y) in self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
        {
            acc += x * y;
        }
        Ok(self.push(Op::Dot { a, b }, Tensor::scalar(acc)))
    }

    /// log Σ exp over scalar nodes. Empty input yields a constant −∞ node.
    pub fn log_sum_exp(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let mut vals = Vec::with_capacity(xs.len());
        for &x in xs {
            if !self.nodes[x.0].value.is_scalar() {
                return Err(Self::shape_err(
                    "log_sum_exp",
                    format!("non-scalar input {:?}", self.nodes[x.0].value.shape),
                ));
            }
            vals.push(self.nodes[x.0].value.data[0]);
        }
        let v = numerics::log_sum_exp(&vals);
        Ok(self.push(Op::LogSumExp { xs: xs.to_vec() }, Tensor::scalar(v)))
    }

    /// n-ary sum of same-shape nodes.
    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Self::shape_err("sum", "no inputs".into()));
        }
        let shape = self.nodes[xs[0].0].value.shape.clone();
        let mut out = vec![0.0; self.nodes[xs[0].0].value.numel()];
        for &x in xs {
            if self.nodes[x.0].value.shape != shape {
                return Err(Self::shape_err(
                    "sum",
                    format!("{:?} vs {:?}", self.nodes[x.0].value.shape, shape),
                ));
            }
            for (o, v) in out.iter_mut().zip(&self.nodes[x.0].value.data) {
                *o += v;
            }
        }
        Ok(self.push(Op::Sum { xs: xs.to_vec() }, Tensor::new(shape, out)))
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let s = &self.nodes[x.0].value.shape;
        if s.len() != 1 || index >= s[0] {
            return Err(Self::shape_err(
                "pick",
                format!("vector {s:?}, index {index}"),
            ));
        }
        let v = self.nodes[x.0].value.data[index];
        Ok(self.push(Op::Pick { x, index }, Tensor::scalar(v)))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.data.iter().map(|v| v + c).collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Op::AddConst { x }, Tensor::new(shape, out))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.data.iter().map(|v| v * c).collect();
        let shape = self.nodes[x.0].value.shape.clone();
        self.push(Op::Scale { x, c }, Tensor::new(shape, out))
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, contribution: &[f64]) {
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => grads[id.0] = Some(contribution.to_vec()),
        }
    }

    /// Reverse sweep from a scalar root. Clears previous gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Self::shape_err(
                "backward",
                format!("root must be scalar, got {:?}", self.nodes[root.0].value.shape),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(vec![1.0]);

        for idx in (0..self.nodes.len()).rev() {
            let g = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-install: the gradient remains readable after the sweep.
            self.grads[idx] = Some(g.clone());

            // Split borrows: nodes are read-only here, grads are mutated.
            let node = &self.nodes[idx];
            let grads = &mut self.grads;
            match &node.op {
                Op::Leaf => {}
                Op::Affine { w, x, b } => {
                    let m = self.nodes[b.0].value.numel();
                    let n = self.nodes[x.0].value.numel();
                    let wd = &self.nodes[w.0].value.data;
                    let xd = &self.nodes[x.0].value.data;
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; n];
                    for r in 0..m {
                        let gr = g[r];
                        for c in 0..n {
                            dw[r * n + c] += gr * xd[c];
                            dx[c] += gr * wd[r * n + c];
                        }
                    }
                    Self::accumulate(grads, *w, &dw);
                    Self::accumulate(grads, *x, &dx);
                    Self::accumulate(grads, *b, &g);
                }
                Op::Tanh { x } => {
                    let factor = self.corrupt_tanh.unwrap_or(1.0);
                    let y = &node.value.data;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| factor * gi * (1.0 - yi * yi))
                        .collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Sigmoid { x } => {
                    let y = &node.value.data;
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| gi * yi * (1.0 - yi))
                        .collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].value.data)
                        .map(|(gi, bi)| gi * bi)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gi, ai)| gi * ai)
                        .collect();
                    Self::accumulate(grads, *a, &da);
                    Self::accumulate(grads, *b, &db);
                }
                Op::Add { a, b } => {
                    Self::accumulate(grads, *a, &g);
                    Self::accumulate(grads, *b, &g);
                }
                Op::Concat { xs } => {
                    let mut offset = 0;
                    for &x in xs {
                        let len = self.nodes[x.0].value.numel();
                        Self::accumulate(grads, x, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Lookup { table, row } => {
                    let s = &self.nodes[table.0].value.shape;
                    let c = s[1];
                    let mut dt = vec![0.0; s[0] * c];
                    dt[row * c..(row + 1) * c].copy_from_slice(&g);
                    Self::accumulate(grads, *table, &dt);
                }
                Op::Dot { a, b } => {
                    let g0 = g[0];
                    let da: Vec<f64> =
                        self.nodes[b.0].value.data.iter().map(|bi| g0 * bi).collect();
                    let db: Vec<f64> =
                        self.nodes[a.0].value.data.iter().map(|ai| g0 * ai).collect();
                    Self::accumulate(grads, *a, &da);
                    Self::accumulate(grads, *b, &db);
                }
                Op::LogSumExp { xs } => {
                    let y = node.value.data[0];
                    let g0 = g[0];
                    // Gradient is the softmax of the inputs. A −∞ output means
                    // every input was −∞; nothing flows back.
                    if y != f64::NEG_INFINITY {
                        for &x in xs {
                            let xi = self.nodes[x.0].value.data[0];
                            let w = if xi == f64::NEG_INFINITY {
                                0.0
                            } else {
                                (xi - y).exp()
                            };
                            Self::accumulate(grads, x, &[g0 * w]);
                        }
                    }
                }
                Op::Sum { xs } => {
                    for &x in xs {
                        Self::accumulate(grads, x, &g);
                    }
                }
                Op::Pick { x, index } => {
                    let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                    dx[*index] = g[0];
                    Self::accumulate(grads, *x, &dx);
                }
                Op::AddConst { x } => {
                    Self::accumulate(grads, *x, &g);
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    Self::accumulate(grads, *x, &dx);
                }
            }
        }
        Ok(())
    }
}
