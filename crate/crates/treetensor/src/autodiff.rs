//! Reverse-mode automatic differentiation over dynamically built
//! computation graphs.
//!
//! Every tree sample gets its own [`Tape`] (define-by-run), which is what
//! backpropagation through structure amounts to: the graph topology
//! follows the tree, and batching is gradient accumulation over
//! per-sample tapes. Tapes borrow a read-only [`ParamStore`] snapshot, so
//! tapes over the same store may run on separate threads; accumulation of
//! their [`GradBuffer`]s into the store is the caller's (serialized)
//! responsibility.
//!
//! Contract violations — mixing nodes across tapes, shape mismatches,
//! non-scalar losses — panic with a diagnostic; they are programming
//! errors, not runtime conditions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::tensor::{augment, contract_mode, matvec, DenseTensor};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),
}

/// Handle to a learnable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    value: DenseTensor,
    grad: DenseTensor,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &DenseTensor {
        &self.value
    }

    pub fn grad(&self) -> &DenseTensor {
        &self.grad
    }
}

/// Ordered collection of named parameters. Insertion order is the
/// canonical order for optimizers, checkpoints, and gradient checks.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseTensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let id = ParamId(self.params.len());
        let grad = DenseTensor::zeros(value.shape().to_vec());
        self.params.push(Parameter { name: name.clone(), value, grad });
        self.by_name.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseTensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseTensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseTensor {
        &self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a gradient buffer into `Parameter.grad`, entry by entry.
    pub fn accumulate(&mut self, grads: &GradBuffer) {
        assert_eq!(grads.slots.len(), self.params.len(), "grad buffer size mismatch");
        for (p, slot) in self.params.iter_mut().zip(&grads.slots) {
            if let Some(g) = slot {
                for (d, s) in p.grad.data_mut().iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Per-parameter gradient accumulator detached from the store, so
/// backward passes can run against a shared read-only snapshot.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    slots: Vec<Option<Vec<f64>>>,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    fn accumulate(&mut self, id: ParamId, numel: usize, values: &[f64]) {
        let slot = self.slots[id.0].get_or_insert_with(|| vec![0.0; numel]);
        for (d, s) in slot.iter_mut().zip(values) {
            *d += s;
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    /// Left-fold merge: `self += other`.
    pub fn merge(&mut self, other: &GradBuffer) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(s) = src {
                match dst {
                    Some(d) => {
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                    None => *dst = Some(s.clone()),
                }
            }
        }
    }

    pub fn clear(&mut self) {
        for slot in &mut self.slots {
            *slot = None;
        }
    }
}

/// Reference to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Add(usize, usize),
    Scale(usize, f64),
    Hadamard(usize, usize),
    /// `mat [rows, cols] * vec [cols]`.
    MatVec(usize, usize),
    /// Augmented multi-affine contraction: `map` has one mode per input
    /// (extent `len+1`) plus the output mode.
    MultiAffine { map: usize, inputs: Vec<usize> },
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize),
    Concat(Vec<usize>),
    /// `out[t] = l' * forms[t] * r` with `forms [k, len(l), len(r)]`.
    Bilinear { forms: usize, left: usize, right: usize },
    /// Scalar `logsumexp(logits) - logits[class]`.
    SoftmaxXent { logits: usize, class: usize },
    /// Scalar `sum(x^2)`.
    SumSquares(usize),
}

struct Node {
    op: Op,
    /// Owned forward value; `None` for `Param` nodes, whose value lives
    /// in the store.
    value: Option<DenseTensor>,
    needs_grad: bool,
}

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Recorded computation graph over a read-only parameter snapshot.
/// Nodes are appended in topological order; `backward` walks them in
/// reverse.
pub struct Tape<'s> {
    store: &'s ParamStore,
    id: u64,
    nodes: Vec<Node>,
}

/// Tape-side handles for a Tucker-factored transition's parameters.
pub struct TuckerRefs {
    pub label_mode: Option<NodeRef>,
    pub context_modes: Vec<NodeRef>,
    pub core: NodeRef,
    pub output_mode: NodeRef,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, r: NodeRef) -> usize {
        assert_eq!(r.tape, self.id, "node belongs to a different tape");
        r.idx
    }

    fn push(&mut self, op: Op, value: DenseTensor, needs_grad: bool) -> NodeRef {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeRef {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Forward value of a node.
    pub fn value(&self, r: NodeRef) -> &DenseTensor {
        let idx = self.check(r);
        self.node_value(idx)
    }

    fn node_value(&self, idx: usize) -> &DenseTensor {
        let node = &self.nodes[idx];
        match &node.value {
            Some(v) => v,
            None => match node.op {
                Op::Param(id) => self.store.value(id),
                _ => unreachable!("only param nodes defer their value"),
            },
        }
    }

    fn needs_grad(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    pub fn constant(&mut self, value: DenseTensor) -> NodeRef {
        self.push(Op::Const, value, false)
    }

    pub fn const_vec(&mut self, v: &[f64]) -> NodeRef {
        self.constant(DenseTensor::from_vec(v.to_vec()))
    }

    pub fn param(&mut self, id: ParamId) -> NodeRef {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        NodeRef {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        let (ia, ib) = (self.check(a), self.check(b));
        let (va, vb) = (self.node_value(ia), self.node_value(ib));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = DenseTensor::new(va.shape().to_vec(), data).unwrap();
        let ng = self.needs_grad(ia) || self.needs_grad(ib);
        self.push(Op::Add(ia, ib), value, ng)
    }

    pub fn scale(&mut self, a: NodeRef, k: f64) -> NodeRef {
        let ia = self.check(a);
        let va = self.node_value(ia);
        let data = va.data().iter().map(|x| k * x).collect();
        let value = DenseTensor::new(va.shape().to_vec(), data).unwrap();
        let ng = self.needs_grad(ia);
        self.push(Op::Scale(ia, k), value, ng)
    }

    pub fn hadamard(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        let (ia, ib) = (self.check(a), self.check(b));
        let (va, vb) = (self.node_value(ia), self.node_value(ib));
        assert_eq!(va.shape(), vb.shape(), "hadamard shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = DenseTensor::new(va.shape().to_vec(), data).unwrap();
        let ng = self.needs_grad(ia) || self.needs_grad(ib);
        self.push(Op::Hadamard(ia, ib), value, ng)
    }

    pub fn matvec(&mut self, mat: NodeRef, vec: NodeRef) -> NodeRef {
        let (im, iv) = (self.check(mat), self.check(vec));
        let (vm, vv) = (self.node_value(im), self.node_value(iv));
        let out = matvec(vm, vv.data()).expect("matvec shape mismatch");
        let value = DenseTensor::from_vec(out);
        let ng = self.needs_grad(im) || self.needs_grad(iv);
        self.push(Op::MatVec(im, iv), value, ng)
    }

    /// Augmented multi-affine contraction of `inputs` against `map`.
    /// The map node's value must have one mode of extent `len(input)+1`
    /// per input (in order) plus a trailing output mode.
    pub fn multi_affine(&mut self, map: NodeRef, inputs: &[NodeRef]) -> NodeRef {
        let im = self.check(map);
        let idxs: Vec<usize> = inputs.iter().map(|&r| self.check(r)).collect();
        let vm = self.node_value(im);
        assert_eq!(
            vm.ndim(),
            idxs.len() + 1,
            "multi-affine map rank must be inputs + 1"
        );
        let augmented: Vec<Vec<f64>> = idxs
            .iter()
            .enumerate()
            .map(|(s, &i)| {
                let v = self.node_value(i);
                assert_eq!(
                    v.numel() + 1,
                    vm.shape()[s],
                    "multi-affine input {s} length mismatch"
                );
                augment(v.data())
            })
            .collect();
        let views: Vec<&[f64]> = augmented.iter().map(|v| v.as_slice()).collect();
        let out = crate::tensor::contract_leading(vm.data(), vm.shape(), &views);
        let value = DenseTensor::from_vec(out);
        let ng = self.needs_grad(im) || idxs.iter().any(|&i| self.needs_grad(i));
        self.push(Op::MultiAffine { map: im, inputs: idxs }, value, ng)
    }

    /// Tucker-factored transition recorded as mode-matrix products, the
    /// core contraction, and the output map. Value and gradients agree
    /// with `tensor::tucker_apply` on the same factors.
    pub fn tucker_apply(
        &mut self,
        factors: &TuckerRefs,
        label: Option<NodeRef>,
        context: &[NodeRef],
    ) -> NodeRef {
        assert_eq!(
            factors.context_modes.len(),
            context.len(),
            "tucker context arity mismatch"
        );
        assert_eq!(
            factors.label_mode.is_some(),
            label.is_some(),
            "tucker label arity mismatch"
        );
        let mut reduced = Vec::with_capacity(context.len() + 1);
        if let (Some(w), Some(x)) = (factors.label_mode, label) {
            reduced.push(self.matvec(w, x));
        }
        for (&u, &h) in factors.context_modes.iter().zip(context) {
            reduced.push(self.matvec(u, h));
        }
        let core_out = self.multi_affine(factors.core, &reduced);
        self.matvec(factors.output_mode, core_out)
    }

    pub fn sigmoid(&mut self, a: NodeRef) -> NodeRef {
        let ia = self.check(a);
        let va = self.node_value(ia);
        let data = va.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = DenseTensor::new(va.shape().to_vec(), data).unwrap();
        let ng = self.needs_grad(ia);
        self.push(Op::Sigmoid(ia), value, ng)
    }

    pub fn tanh(&mut self, a: NodeRef) -> NodeRef {
        let ia = self.check(a);
        let va = self.node_value(ia);
        let data = va.data().iter().map(|&x| x.tanh()).collect();
        let value = DenseTensor::new(va.shape().to_vec(), data).unwrap();
        let ng = self.needs_grad(ia);
        self.push(Op::Tanh(ia), value, ng)
    }

    /// `max(x, 0) + 0.01 * min(x, 0)`.
    pub fn leaky_relu(&mut self, a: NodeRef) -> NodeRef {
        let ia = self.check(a);
        let va = self.node_value(ia);
        let data = va
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
            .collect();
        let value = DenseTensor::new(va.shape().to_vec(), data).unwrap();
        let ng = self.needs_grad(ia);
        self.push(Op::LeakyRelu(ia), value, ng)
    }

    pub fn concat(&mut self, parts: &[NodeRef]) -> NodeRef {
        assert!(!parts.is_empty(), "concat of zero nodes");
        let idxs: Vec<usize> = parts.iter().map(|&r| self.check(r)).collect();
        let mut data = Vec::new();
        for &i in &idxs {
            data.extend_from_slice(self.node_value(i).data());
        }
        let value = DenseTensor::from_vec(data);
        let ng = idxs.iter().any(|&i| self.needs_grad(i));
        self.push(Op::Concat(idxs), value, ng)
    }

    /// Stacked bilinear forms: `out[t] = left' * forms[t] * right`.
    pub fn bilinear(&mut self, forms: NodeRef, left: NodeRef, right: NodeRef) -> NodeRef {
        let (ifm, il, ir) = (self.check(forms), self.check(left), self.check(right));
        let (vf, vl, vr) = (self.node_value(ifm), self.node_value(il), self.node_value(ir));
        assert_eq!(vf.ndim(), 3, "bilinear forms must be 3-way [k, l, r]");
        let (k, dl, dr) = (vf.shape()[0], vf.shape()[1], vf.shape()[2]);
        assert_eq!(vl.numel(), dl, "bilinear left length mismatch");
        assert_eq!(vr.numel(), dr, "bilinear right length mismatch");
        let (l, r, f) = (vl.data(), vr.data(), vf.data());
        let mut out = vec![0.0; k];
        for (t, o) in out.iter_mut().enumerate() {
            let ft = &f[t * dl * dr..(t + 1) * dl * dr];
            let mut acc = 0.0;
            for (a, &la) in l.iter().enumerate() {
                let row = &ft[a * dr..(a + 1) * dr];
                let mut inner = 0.0;
                for (x, y) in row.iter().zip(r) {
                    inner += x * y;
                }
                acc += la * inner;
            }
            *o = acc;
        }
        let value = DenseTensor::from_vec(out);
        let ng = self.needs_grad(ifm) || self.needs_grad(il) || self.needs_grad(ir);
        self.push(Op::Bilinear { forms: ifm, left: il, right: ir }, value, ng)
    }

    /// Numerically stable `logsumexp(logits) - logits[class]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeRef, class: usize) -> NodeRef {
        let il = self.check(logits);
        let z = self.node_value(il).data();
        assert!(class < z.len(), "class index out of range");
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&x| (x - m).exp()).sum();
        let loss = m + sum.ln() - z[class];
        let ng = self.needs_grad(il);
        self.push(Op::SoftmaxXent { logits: il, class }, DenseTensor::scalar(loss), ng)
    }

    pub fn sum_squares(&mut self, a: NodeRef) -> NodeRef {
        let ia = self.check(a);
        let s: f64 = self.node_value(ia).data().iter().map(|x| x * x).sum();
        let ng = self.needs_grad(ia);
        self.push(Op::SumSquares(ia), DenseTensor::scalar(s), ng)
    }

    /// Reverse pass from a scalar loss node, accumulating parameter
    /// gradients into `grads`. May be called repeatedly; contributions
    /// add up.
    pub fn backward_into(&self, loss: NodeRef, grads: &mut GradBuffer) {
        let il = self.check(loss);
        assert_eq!(
            self.node_value(il).numel(),
            1,
            "backward requires a scalar loss node"
        );
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoint[il] = Some(vec![1.0]);

        for idx in (0..=il).rev() {
            let Some(g) = adjoint[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param(id) => {
                    grads.accumulate(*id, self.store.value(*id).numel(), &g);
                }
                Op::Add(a, b) => {
                    self.bump(&mut adjoint, *a, &g);
                    self.bump(&mut adjoint, *b, &g);
                }
                Op::Scale(a, k) => {
                    let d: Vec<f64> = g.iter().map(|x| k * x).collect();
                    self.bump(&mut adjoint, *a, &d);
                }
                Op::Hadamard(a, b) => {
                    if self.needs_grad(*a) {
                        let vb = self.node_value(*b).data();
                        let d: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                        self.bump(&mut adjoint, *a, &d);
                    }
                    if self.needs_grad(*b) {
                        let va = self.node_value(*a).data();
                        let d: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                        self.bump(&mut adjoint, *b, &d);
                    }
                }
                Op::MatVec(m, v) => {
                    let vm = self.node_value(*m);
                    let (rows, cols) = (vm.shape()[0], vm.shape()[1]);
                    if self.needs_grad(*m) {
                        let vv = self.node_value(*v).data();
                        let mut d = vec![0.0; rows * cols];
                        for (r, &gr) in g.iter().enumerate() {
                            let row = &mut d[r * cols..(r + 1) * cols];
                            for (dd, &x) in row.iter_mut().zip(vv) {
                                *dd = gr * x;
                            }
                        }
                        self.bump(&mut adjoint, *m, &d);
                    }
                    if self.needs_grad(*v) {
                        let md = vm.data();
                        let mut d = vec![0.0; cols];
                        for (r, &gr) in g.iter().enumerate() {
                            let row = &md[r * cols..(r + 1) * cols];
                            for (dd, &x) in d.iter_mut().zip(row) {
                                *dd += gr * x;
                            }
                        }
                        self.bump(&mut adjoint, *v, &d);
                    }
                }
                Op::MultiAffine { map, inputs } => {
                    self.multi_affine_backward(&mut adjoint, *map, inputs, &g);
                }
                Op::Sigmoid(a) => {
                    let y = self.node_value(idx).data();
                    let d: Vec<f64> = g.iter().zip(y).map(|(x, s)| x * s * (1.0 - s)).collect();
                    self.bump(&mut adjoint, *a, &d);
                }
                Op::Tanh(a) => {
                    let y = self.node_value(idx).data();
                    let d: Vec<f64> = g.iter().zip(y).map(|(x, t)| x * (1.0 - t * t)).collect();
                    self.bump(&mut adjoint, *a, &d);
                }
                Op::LeakyRelu(a) => {
                    let x = self.node_value(*a).data();
                    let d: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(gg, &xx)| if xx > 0.0 { *gg } else { LEAKY_SLOPE * gg })
                        .collect();
                    self.bump(&mut adjoint, *a, &d);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.node_value(p).numel();
                        if self.needs_grad(p) {
                            self.bump(&mut adjoint, p, &g[off..off + n]);
                        }
                        off += n;
                    }
                }
                Op::Bilinear { forms, left, right } => {
                    let vf = self.node_value(*forms);
                    let (k, dl, dr) = (vf.shape()[0], vf.shape()[1], vf.shape()[2]);
                    let (f, l, r) = (
                        vf.data(),
                        self.node_value(*left).data(),
                        self.node_value(*right).data(),
                    );
                    if self.needs_grad(*forms) {
                        let mut d = vec![0.0; k * dl * dr];
                        for t in 0..k {
                            let gt = g[t];
                            if gt == 0.0 {
                                continue;
                            }
                            let dt = &mut d[t * dl * dr..(t + 1) * dl * dr];
                            for (a, &la) in l.iter().enumerate() {
                                let w = gt * la;
                                let row = &mut dt[a * dr..(a + 1) * dr];
                                for (dd, &rb) in row.iter_mut().zip(r) {
                                    *dd = w * rb;
                                }
                            }
                        }
                        self.bump(&mut adjoint, *forms, &d);
                    }
                    if self.needs_grad(*left) {
                        let mut d = vec![0.0; dl];
                        for t in 0..k {
                            let gt = g[t];
                            let ft = &f[t * dl * dr..(t + 1) * dl * dr];
                            for (a, dd) in d.iter_mut().enumerate() {
                                let row = &ft[a * dr..(a + 1) * dr];
                                let mut inner = 0.0;
                                for (x, y) in row.iter().zip(r) {
                                    inner += x * y;
                                }
                                *dd += gt * inner;
                            }
                        }
                        self.bump(&mut adjoint, *left, &d);
                    }
                    if self.needs_grad(*right) {
                        let mut d = vec![0.0; dr];
                        for t in 0..k {
                            let gt = g[t];
                            let ft = &f[t * dl * dr..(t + 1) * dl * dr];
                            for (a, &la) in l.iter().enumerate() {
                                let w = gt * la;
                                let row = &ft[a * dr..(a + 1) * dr];
                                for (dd, &x) in d.iter_mut().zip(row) {
                                    *dd += w * x;
                                }
                            }
                        }
                        self.bump(&mut adjoint, *right, &d);
                    }
                }
                Op::SoftmaxXent { logits, class } => {
                    let z = self.node_value(*logits).data();
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.iter().map(|&x| (x - m).exp()).sum();
                    let g0 = g[0];
                    let mut d: Vec<f64> =
                        z.iter().map(|&x| g0 * (x - m).exp() / sum).collect();
                    d[*class] -= g0;
                    self.bump(&mut adjoint, *logits, &d);
                }
                Op::SumSquares(a) => {
                    let x = self.node_value(*a).data();
                    let g0 = g[0];
                    let d: Vec<f64> = x.iter().map(|&v| 2.0 * g0 * v).collect();
                    self.bump(&mut adjoint, *a, &d);
                }
            }
        }
    }

    /// Convenience wrapper allocating a fresh buffer.
    pub fn backward(&self, loss: NodeRef) -> GradBuffer {
        let mut grads = GradBuffer::new(self.store);
        self.backward_into(loss, &mut grads);
        grads
    }

    fn bump(&self, adjoint: &mut [Option<Vec<f64>>], idx: usize, contribution: &[f64]) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        match &mut adjoint[idx] {
            Some(acc) => {
                for (d, s) in acc.iter_mut().zip(contribution) {
                    *d += s;
                }
            }
            None => adjoint[idx] = Some(contribution.to_vec()),
        }
    }

    fn multi_affine_backward(
        &self,
        adjoint: &mut [Option<Vec<f64>>],
        map: usize,
        inputs: &[usize],
        g: &[f64],
    ) {
        let vm = self.node_value(map);
        let augmented: Vec<Vec<f64>> = inputs
            .iter()
            .map(|&i| augment(self.node_value(i).data()))
            .collect();

        if self.needs_grad(map) {
            // d_map = outer(augmented inputs) (x) g
            let mut outer = vec![1.0];
            for v in &augmented {
                let mut next = Vec::with_capacity(outer.len() * v.len());
                for &o in &outer {
                    for &x in v {
                        next.push(o * x);
                    }
                }
                outer = next;
            }
            let c = g.len();
            let mut d = vec![0.0; vm.numel()];
            for (b, &o) in outer.iter().enumerate() {
                if o == 0.0 {
                    continue;
                }
                let dst = &mut d[b * c..(b + 1) * c];
                for (dd, &gg) in dst.iter_mut().zip(g) {
                    *dd = o * gg;
                }
            }
            self.bump(adjoint, map, &d);
        }

        // per-slot input gradients: contract the output mode with g, then
        // every other input mode with its augmented vector (last-to-first
        // keeps remaining mode indices stable), dropping the homogeneous
        // entry of the result
        let p = inputs.len();
        let needs: Vec<bool> = inputs.iter().map(|&i| self.needs_grad(i)).collect();
        if needs.iter().any(|&n| n) {
            let contracted = contract_mode(vm, p, g).expect("output contraction");
            for (s, &inp) in inputs.iter().enumerate() {
                if !needs[s] {
                    continue;
                }
                let mut cur = contracted.clone();
                for t in (0..p).rev() {
                    if t == s {
                        continue;
                    }
                    cur = contract_mode(&cur, t, &augmented[t]).expect("slot contraction");
                }
                let full = cur.data();
                let n = self.node_value(inp).numel();
                self.bump(adjoint, inp, &full[..n]);
            }
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// Central-difference gradient verification.
///
/// `build` must deterministically record a scalar loss on the given tape
/// as a function of the store's current parameter values. Returns the
/// maximum over all parameter entries of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    eps: f64,
    mut build: F,
) -> Result<f64, AutodiffError>
where
    F: FnMut(&mut Tape<'_>) -> NodeRef,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        let v = tape.value(loss).data()[0];
        if !v.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(v));
        }
        tape.backward(loss)
    };

    let mut eval = |store: &mut ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        let v = tape.value(loss).data()[0];
        if !v.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(v));
        }
        Ok(v)
    };

    let mut max_err = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        let numel = store.value(id).numel();
        for e in 0..numel {
            let orig = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = orig + eps;
            let lp = eval(store)?;
            store.value_mut(id).data_mut()[e] = orig - eps;
            let lm = eval(store)?;
            store.value_mut(id).data_mut()[e] = orig;

            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[e]);
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
