//! Tree-LSTM cells over the three aggregation functions, bottom-up
//! encoding with per-operator parameter banks, and the two task heads.
//!
//! Gates `i`, `o` and the update `u` aggregate the padded child context
//! through the configured aggregator (operator-sliced, no label input);
//! forget gates stay sum-style in every variant, one per child slot,
//! depending only on that child's hidden state. Missing children are
//! padded with zero states and their forget terms skipped.

use thiserror::Error;

use crate::agg::{AggParamIds, AggregatorSpec};
use crate::autodiff::{NodeRef, ParamId, ParamStore, Tape};
use crate::tensor::DenseTensor;
use crate::tree::{Tree, TreeError, TreeNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown operator id {op} (bank has {count})")]
    UnknownOperator { op: usize, count: usize },
    #[error("node has {got} children, bank supports at most {max}")]
    TooManyChildren { got: usize, max: usize },
    #[error("leaf payload has length {got}, bank expects {expected}")]
    PayloadDim { got: usize, expected: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Hidden state and memory cell of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c_mem: Vec<f64>,
}

/// Nonlinearity for the update value `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateActivation {
    Tanh,
    Sigmoid,
}

impl std::str::FromStr for UpdateActivation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(UpdateActivation::Tanh),
            "sigmoid" => Ok(UpdateActivation::Sigmoid),
            other => Err(format!("unknown update activation {other:?}")),
        }
    }
}

/// Shape of a cell bank: aggregator dimensions, leaf input size, operator
/// vocabulary, and the update nonlinearity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CellConfig {
    pub agg: AggregatorSpec,
    pub input_dim: usize,
    pub num_operators: usize,
    pub update_activation: UpdateActivation,
}

/// Per-slot forget gate parameters.
#[derive(Debug, Clone)]
pub struct ForgetSlot {
    pub u: ParamId,
    pub b: ParamId,
}

/// Parameters of one operator's cell: separate aggregator parameters for
/// the `i`, `o`, `u` gates plus per-slot forget gates.
#[derive(Debug, Clone)]
pub struct OpCell {
    pub gate_i: AggParamIds,
    pub gate_o: AggParamIds,
    pub gate_u: AggParamIds,
    pub forget: Vec<ForgetSlot>,
}

/// Input-only leaf cell: `i = sig(W_i x + b_i)`, `o = sig(W_o x + b_o)`,
/// `u = act(W_u x + b_u)`, `c = i (*) u`, `h = o (*) tanh(c)`.
#[derive(Debug, Clone)]
pub struct LeafCell {
    pub w_i: ParamId,
    pub b_i: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub w_u: ParamId,
    pub b_u: ParamId,
}

/// One cell per grammar operator plus the shared leaf cell.
#[derive(Debug, Clone)]
pub struct CellBank {
    cfg: CellConfig,
    ops: Vec<OpCell>,
    leaf: LeafCell,
}

impl CellBank {
    /// Registers all parameters of a fresh bank. `init(shape, fan_in)`
    /// produces weight tensors; biases start at zero.
    pub fn init(
        store: &mut ParamStore,
        cfg: CellConfig,
        init: &mut dyn FnMut(Vec<usize>, usize) -> DenseTensor,
    ) -> Self {
        assert_eq!(cfg.agg.label_dim, 0, "internal cells are operator-sliced");
        let c = cfg.agg.hidden_dim;
        let l = cfg.agg.context_size;
        let m = cfg.input_dim;
        let ops = (0..cfg.num_operators)
            .map(|k| OpCell {
                gate_i: AggParamIds::init(store, &cfg.agg, &format!("op{k}.i"), init),
                gate_o: AggParamIds::init(store, &cfg.agg, &format!("op{k}.o"), init),
                gate_u: AggParamIds::init(store, &cfg.agg, &format!("op{k}.u"), init),
                forget: (0..l)
                    .map(|j| ForgetSlot {
                        u: store.add(format!("op{k}.f{j}.u"), init(vec![c, c], c)),
                        b: store.add(format!("op{k}.f{j}.b"), DenseTensor::zeros(vec![c])),
                    })
                    .collect(),
            })
            .collect();
        let leaf = LeafCell {
            w_i: store.add("leaf.i.w", init(vec![c, m], m)),
            b_i: store.add("leaf.i.b", DenseTensor::zeros(vec![c])),
            w_o: store.add("leaf.o.w", init(vec![c, m], m)),
            b_o: store.add("leaf.o.b", DenseTensor::zeros(vec![c])),
            w_u: store.add("leaf.u.w", init(vec![c, m], m)),
            b_u: store.add("leaf.u.b", DenseTensor::zeros(vec![c])),
        };
        Self { cfg, ops, leaf }
    }

    pub fn config(&self) -> &CellConfig {
        &self.cfg
    }

    pub fn hidden_dim(&self) -> usize {
        self.cfg.agg.hidden_dim
    }

    pub fn context_size(&self) -> usize {
        self.cfg.agg.context_size
    }

    pub fn op_cells(&self) -> &[OpCell] {
        &self.ops
    }

    pub fn op_cells_mut(&mut self) -> &mut [OpCell] {
        &mut self.ops
    }

    pub fn leaf_cell(&self) -> &LeafCell {
        &self.leaf
    }

    fn update_act(&self, tape: &mut Tape<'_>, x: NodeRef) -> NodeRef {
        match self.cfg.update_activation {
            UpdateActivation::Tanh => tape.tanh(x),
            UpdateActivation::Sigmoid => tape.sigmoid(x),
        }
    }

    /// Leaf cell on a payload node.
    pub fn record_leaf(&self, tape: &mut Tape<'_>, x: NodeRef) -> (NodeRef, NodeRef) {
        let gate = |tape: &mut Tape<'_>, w: ParamId, b: ParamId| {
            let wn = tape.param(w);
            let bn = tape.param(b);
            let wx = tape.matvec(wn, x);
            tape.add(wx, bn)
        };
        let pre_i = gate(tape, self.leaf.w_i, self.leaf.b_i);
        let pre_o = gate(tape, self.leaf.w_o, self.leaf.b_o);
        let pre_u = gate(tape, self.leaf.w_u, self.leaf.b_u);
        let i = tape.sigmoid(pre_i);
        let o = tape.sigmoid(pre_o);
        let u = self.update_act(tape, pre_u);
        let c = tape.hadamard(i, u);
        let tc = tape.tanh(c);
        let h = tape.hadamard(o, tc);
        (h, c)
    }

    /// Internal cell on already-encoded child states. Children beyond
    /// `children.len()` are padded with zero states; their forget terms
    /// are skipped.
    pub fn record_internal(
        &self,
        tape: &mut Tape<'_>,
        op: usize,
        children: &[(NodeRef, NodeRef)],
    ) -> Result<(NodeRef, NodeRef), ModelError> {
        let l = self.context_size();
        if children.len() > l {
            return Err(ModelError::TooManyChildren {
                got: children.len(),
                max: l,
            });
        }
        let cell = self.ops.get(op).ok_or(ModelError::UnknownOperator {
            op,
            count: self.ops.len(),
        })?;

        let mut context: Vec<NodeRef> = children.iter().map(|&(h, _)| h).collect();
        if children.len() < l {
            let zero = tape.constant(DenseTensor::zeros(vec![self.hidden_dim()]));
            context.resize(l, zero);
        }

        let pre_i = cell.gate_i.record(tape, None, &context);
        let pre_o = cell.gate_o.record(tape, None, &context);
        let pre_u = cell.gate_u.record(tape, None, &context);
        let i = tape.sigmoid(pre_i);
        let o = tape.sigmoid(pre_o);
        let u = self.update_act(tape, pre_u);

        let mut c = tape.hadamard(i, u);
        for (slot, &(h_j, c_j)) in children.iter().enumerate() {
            let un = tape.param(cell.forget[slot].u);
            let bn = tape.param(cell.forget[slot].b);
            let uh = tape.matvec(un, h_j);
            let pre_f = tape.add(uh, bn);
            let f = tape.sigmoid(pre_f);
            let fc = tape.hadamard(f, c_j);
            c = tape.add(c, fc);
        }
        let tc = tape.tanh(c);
        let h = tape.hadamard(o, tc);
        Ok((h, c))
    }

    /// Bottom-up encoding of a whole tree; returns the root state nodes.
    pub fn record_encode(
        &self,
        tape: &mut Tape<'_>,
        tree: &Tree,
    ) -> Result<(NodeRef, NodeRef), ModelError> {
        let mut states: Vec<Option<(NodeRef, NodeRef)>> = vec![None; tree.len()];
        for idx in tree.postorder() {
            let state = match tree.node(idx) {
                TreeNode::Leaf { payload } => {
                    if payload.len() != self.cfg.input_dim {
                        return Err(ModelError::PayloadDim {
                            got: payload.len(),
                            expected: self.cfg.input_dim,
                        });
                    }
                    let x = tape.const_vec(payload);
                    self.record_leaf(tape, x)
                }
                TreeNode::Internal { op, children } => {
                    let child_states: Vec<(NodeRef, NodeRef)> = children
                        .iter()
                        .map(|&cix| states[cix].expect("postorder visits children first"))
                        .collect();
                    self.record_internal(tape, *op, &child_states)?
                }
            };
            states[idx] = Some(state);
        }
        Ok(states[tree.root()].expect("root encoded"))
    }

    /// Value-level single-cell forward on explicit child states.
    pub fn cell_forward(
        &self,
        store: &ParamStore,
        op: usize,
        children: &[LstmState],
    ) -> Result<LstmState, ModelError> {
        let mut tape = Tape::new(store);
        let refs: Vec<(NodeRef, NodeRef)> = children
            .iter()
            .map(|s| {
                let h = tape.const_vec(&s.h);
                let c = tape.const_vec(&s.c_mem);
                (h, c)
            })
            .collect();
        let (h, c) = self.record_internal(&mut tape, op, &refs)?;
        Ok(LstmState {
            h: tape.value(h).data().to_vec(),
            c_mem: tape.value(c).data().to_vec(),
        })
    }

    /// Value-level whole-tree encoding (scratch tape, no gradients kept).
    pub fn encode(&self, store: &ParamStore, tree: &Tree) -> Result<LstmState, ModelError> {
        let mut tape = Tape::new(store);
        let (h, c) = self.record_encode(&mut tape, tree)?;
        Ok(LstmState {
            h: tape.value(h).data().to_vec(),
            c_mem: tape.value(c).data().to_vec(),
        })
    }
}

/// Relation-classification head: `k` comparison units
/// `z_t = leakyrelu(h_l' B_t h_r + V_t [h_l; h_r] + d_t)` followed by an
/// affine map to the 7 relation logits.
#[derive(Debug, Clone)]
pub struct LrtHead {
    pub forms: ParamId,
    pub mix: ParamId,
    pub bias: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub units: usize,
}

pub const LRT_CLASSES: usize = 7;

impl LrtHead {
    pub fn init(
        store: &mut ParamStore,
        hidden_dim: usize,
        units: usize,
        init: &mut dyn FnMut(Vec<usize>, usize) -> DenseTensor,
    ) -> Self {
        let c = hidden_dim;
        Self {
            forms: store.add("head.forms", init(vec![units, c, c], c * c)),
            mix: store.add("head.mix", init(vec![units, 2 * c], 2 * c)),
            bias: store.add("head.bias", DenseTensor::zeros(vec![units])),
            out_w: store.add("head.out.w", init(vec![LRT_CLASSES, units], units)),
            out_b: store.add("head.out.b", DenseTensor::zeros(vec![LRT_CLASSES])),
            units,
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, h_left: NodeRef, h_right: NodeRef) -> NodeRef {
        let forms = tape.param(self.forms);
        let bil = tape.bilinear(forms, h_left, h_right);
        let both = tape.concat(&[h_left, h_right]);
        let mix = tape.param(self.mix);
        let mixed = tape.matvec(mix, both);
        let bias = tape.param(self.bias);
        let s = tape.add(bil, mixed);
        let pre = tape.add(s, bias);
        let z = tape.leaky_relu(pre);
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let wz = tape.matvec(w, z);
        tape.add(wz, b)
    }
}

/// Digit-classification head: two affine layers of `hidden` units with
/// leaky-relu activations, then an affine map to the 10 digit logits.
#[derive(Debug, Clone)]
pub struct ListopsHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

pub const LISTOPS_CLASSES: usize = 10;
pub const LISTOPS_HEAD_HIDDEN: usize = 20;

impl ListopsHead {
    pub fn init(
        store: &mut ParamStore,
        hidden_dim: usize,
        init: &mut dyn FnMut(Vec<usize>, usize) -> DenseTensor,
    ) -> Self {
        let n = LISTOPS_HEAD_HIDDEN;
        Self {
            w1: store.add("head.w1", init(vec![n, hidden_dim], hidden_dim)),
            b1: store.add("head.b1", DenseTensor::zeros(vec![n])),
            w2: store.add("head.w2", init(vec![n, n], n)),
            b2: store.add("head.b2", DenseTensor::zeros(vec![n])),
            w3: store.add("head.w3", init(vec![LISTOPS_CLASSES, n], n)),
            b3: store.add("head.b3", DenseTensor::zeros(vec![LISTOPS_CLASSES])),
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, h: NodeRef) -> NodeRef {
        let affine = |tape: &mut Tape<'_>, w: ParamId, b: ParamId, x: NodeRef| {
            let wn = tape.param(w);
            let bn = tape.param(b);
            let wx = tape.matvec(wn, x);
            tape.add(wx, bn)
        };
        let a1 = affine(tape, self.w1, self.b1, h);
        let z1 = tape.leaky_relu(a1);
        let a2 = affine(tape, self.w2, self.b2, z1);
        let z2 = tape.leaky_relu(a2);
        affine(tape, self.w3, self.b3, z2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agg::{sum_to_tensor, AggParamIds, AggregatorKind, SumParams};
    use crate::rng::pcg;
    use crate::tensor::TuckerFactors;
    use rand::{Rng, RngExt};

    fn zeros_init() -> impl FnMut(Vec<usize>, usize) -> DenseTensor {
        |shape, _fan| DenseTensor::zeros(shape)
    }

    fn random_init(seed: u64) -> impl FnMut(Vec<usize>, usize) -> DenseTensor {
        let mut rng = pcg(seed);
        move |shape, _fan| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
            DenseTensor::new(shape, data).unwrap()
        }
    }

    fn cfg(kind: AggregatorKind, c: usize, l: usize, m: usize, r: Option<usize>) -> CellConfig {
        CellConfig {
            agg: AggregatorSpec::new(kind, c, l, 0, r).unwrap(),
            input_dim: m,
            num_operators: 2,
            update_activation: UpdateActivation::Tanh,
        }
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_params_force_zero_states() {
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Sum, 3, 2, 2, None),
            &mut zeros_init(),
        );
        // leaf on zero payload: i = o = 0.5, u = tanh(0) = 0 => h = c = 0
        let leaf = bank.encode(&store, &Tree::leaf(vec![0.0, 0.0])).unwrap();
        assert_eq!(leaf.h, vec![0.0; 3]);
        assert_eq!(leaf.c_mem, vec![0.0; 3]);
        // internal node with no children behaves the same
        let state = bank.cell_forward(&store, 0, &[]).unwrap();
        assert_eq!(state.h, vec![0.0; 3]);
        assert_eq!(state.c_mem, vec![0.0; 3]);
    }

    #[test]
    fn zero_forget_params_halve_child_memory() {
        // all parameters zero: i (*) u = 0 and f = sigmoid(0) = 0.5,
        // so c_v = 0.5 * child c_mem exactly
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Sum, 3, 2, 2, None),
            &mut zeros_init(),
        );
        let child = LstmState {
            h: vec![0.3, -0.7, 1.1],
            c_mem: vec![2.0, -4.0, 0.5],
        };
        let state = bank.cell_forward(&store, 0, std::slice::from_ref(&child)).unwrap();
        let expect: Vec<f64> = child.c_mem.iter().map(|v| 0.5 * v).collect();
        assert_eq!(state.c_mem, expect);
    }

    #[test]
    fn single_leaf_encodes_through_leaf_cell() {
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Sum, 4, 2, 3, None),
            &mut random_init(11),
        );
        let payload = vec![0.25, -0.5, 0.75];
        let enc = bank.encode(&store, &Tree::leaf(payload.clone())).unwrap();

        let mut tape = Tape::new(&store);
        let x = tape.const_vec(&payload);
        let (h, c) = bank.record_leaf(&mut tape, x);
        assert_eq!(enc.h, tape.value(h).data());
        assert_eq!(enc.c_mem, tape.value(c).data());
    }

    #[test]
    fn hand_computed_scalar_tree() {
        // c = 1, L = 2, m = 1, sum aggregation; straight-line scalar
        // arithmetic as the oracle for a 3-node tree
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Sum, 1, 2, 1, None),
            &mut zeros_init(),
        );
        let set = |store: &mut ParamStore, name: &str, v: f64| {
            let id = store.lookup(name).unwrap();
            store.value_mut(id).data_mut()[0] = v;
        };
        // leaf cell
        set(&mut store, "leaf.i.w", 0.7);
        set(&mut store, "leaf.i.b", 0.1);
        set(&mut store, "leaf.o.w", -0.3);
        set(&mut store, "leaf.o.b", 0.2);
        set(&mut store, "leaf.u.w", 1.1);
        set(&mut store, "leaf.u.b", -0.4);
        // operator 0 gates (sum: u0, u1, b per gate)
        set(&mut store, "op0.i.u0", 0.5);
        set(&mut store, "op0.i.u1", -0.2);
        set(&mut store, "op0.i.b", 0.05);
        set(&mut store, "op0.o.u0", 0.3);
        set(&mut store, "op0.o.u1", 0.6);
        set(&mut store, "op0.o.b", -0.1);
        set(&mut store, "op0.u.u0", -0.8);
        set(&mut store, "op0.u.u1", 0.4);
        set(&mut store, "op0.u.b", 0.15);
        // forget slots
        set(&mut store, "op0.f0.u", 0.25);
        set(&mut store, "op0.f0.b", -0.05);
        set(&mut store, "op0.f1.u", -0.35);
        set(&mut store, "op0.f1.b", 0.1);

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let leaf_state = |x: f64| {
            let i = sig(0.7 * x + 0.1);
            let o = sig(-0.3 * x + 0.2);
            let u = (1.1 * x - 0.4).tanh();
            let c = i * u;
            (o * c.tanh(), c)
        };
        let (h1, c1) = leaf_state(0.6);
        let (h2, c2) = leaf_state(-0.9);
        let i = sig(0.5 * h1 - 0.2 * h2 + 0.05);
        let o = sig(0.3 * h1 + 0.6 * h2 - 0.1);
        let u = (-0.8 * h1 + 0.4 * h2 + 0.15).tanh();
        let f1 = sig(0.25 * h1 - 0.05);
        let f2 = sig(-0.35 * h2 + 0.1);
        let c = i * u + f1 * c1 + f2 * c2;
        let h = o * c.tanh();

        let tree = Tree::internal(0, vec![Tree::leaf(vec![0.6]), Tree::leaf(vec![-0.9])]);
        let enc = bank.encode(&store, &tree).unwrap();
        assert!((enc.h[0] - h).abs() <= 1e-12, "{} vs {h}", enc.h[0]);
        assert!((enc.c_mem[0] - c).abs() <= 1e-12);
    }

    /// Swapping child-slot parameters together with the two child
    /// subtrees must not change the root state: semantics are
    /// slot-indexed. Children are leaves so the swap touches only the
    /// root cell's slots.
    #[test]
    fn slot_relabeling_symmetry() {
        let c = 3;
        let left = Tree::leaf(vec![0.2, -0.1]);
        let right = Tree::leaf(vec![-0.6, 0.3]);

        // sum variant: swap U_0 <-> U_1 and the forget slots
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Sum, c, 2, 2, None),
            &mut random_init(17),
        );
        let original = bank
            .encode(&store, &Tree::internal(0, vec![left.clone(), right.clone()]))
            .unwrap();
        let mut swapped = store.clone();
        let swap = |s: &mut ParamStore, a: &str, b: &str| {
            let (ia, ib) = (s.lookup(a).unwrap(), s.lookup(b).unwrap());
            let (va, vb) = (s.value(ia).clone(), s.value(ib).clone());
            *s.value_mut(ia) = vb;
            *s.value_mut(ib) = va;
        };
        for gate in ["i", "o", "u"] {
            swap(&mut swapped, &format!("op0.{gate}.u0"), &format!("op0.{gate}.u1"));
        }
        for field in ["u", "b"] {
            swap(&mut swapped, &format!("op0.f0.{field}"), &format!("op0.f1.{field}"));
        }
        let mirrored = bank
            .encode(&swapped, &Tree::internal(0, vec![right.clone(), left.clone()]))
            .unwrap();
        assert!(max_abs_diff(&original.h, &mirrored.h) <= 1e-12);
        assert!(max_abs_diff(&original.c_mem, &mirrored.c_mem) <= 1e-12);

        // full variant: transpose the two context modes of each gate tensor
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Full, c, 2, 2, None),
            &mut random_init(19),
        );
        let original = bank
            .encode(&store, &Tree::internal(0, vec![left.clone(), right.clone()]))
            .unwrap();
        let mut swapped = store.clone();
        for gate in ["i", "o", "u"] {
            let id = swapped.lookup(&format!("op0.{gate}.t")).unwrap();
            let t = swapped.value(id).clone();
            let e = c + 1;
            let mut perm = t.clone();
            for a in 0..e {
                for b in 0..e {
                    for k in 0..c {
                        perm.set(&[b, a, k], t.get(&[a, b, k]));
                    }
                }
            }
            *swapped.value_mut(id) = perm;
        }
        for field in ["u", "b"] {
            swap(&mut swapped, &format!("op0.f0.{field}"), &format!("op0.f1.{field}"));
        }
        let mirrored = bank
            .encode(&swapped, &Tree::internal(0, vec![right, left]))
            .unwrap();
        assert!(max_abs_diff(&original.h, &mirrored.h) <= 1e-12);
        assert!(max_abs_diff(&original.c_mem, &mirrored.c_mem) <= 1e-12);
    }

    /// Builds a full-tensor bank whose gate tensors embed the sum bank's
    /// parameters; both encoders must agree everywhere.
    #[test]
    fn sum_bank_equals_embedded_full_bank() {
        let (c, l, m) = (3, 2, 2);
        let mut sum_store = ParamStore::new();
        let sum_bank = CellBank::init(
            &mut sum_store,
            cfg(AggregatorKind::Sum, c, l, m, None),
            &mut random_init(23),
        );

        let mut full_store = ParamStore::new();
        let full_bank = CellBank::init(
            &mut full_store,
            cfg(AggregatorKind::Full, c, l, m, None),
            &mut zeros_init(),
        );
        // copy leaf + forget params; embed each gate's sum params
        for name in [
            "leaf.i.w", "leaf.i.b", "leaf.o.w", "leaf.o.b", "leaf.u.w", "leaf.u.b",
        ] {
            let src = sum_store.lookup(name).unwrap();
            let dst = full_store.lookup(name).unwrap();
            *full_store.value_mut(dst) = sum_store.value(src).clone();
        }
        for k in 0..2 {
            for j in 0..l {
                for field in ["u", "b"] {
                    let name = format!("op{k}.f{j}.{field}");
                    let src = sum_store.lookup(&name).unwrap();
                    let dst = full_store.lookup(&name).unwrap();
                    *full_store.value_mut(dst) = sum_store.value(src).clone();
                }
            }
            for gate in ["i", "o", "u"] {
                let params = SumParams {
                    label_map: None,
                    child_maps: (0..l)
                        .map(|j| {
                            sum_store
                                .value(sum_store.lookup(&format!("op{k}.{gate}.u{j}")).unwrap())
                                .clone()
                        })
                        .collect(),
                    bias: sum_store
                        .value(sum_store.lookup(&format!("op{k}.{gate}.b")).unwrap())
                        .data()
                        .to_vec(),
                };
                let embedded = sum_to_tensor(&params);
                let dst = full_store.lookup(&format!("op{k}.{gate}.t")).unwrap();
                *full_store.value_mut(dst) = embedded.map.into_tensor();
            }
        }

        let mut rng = pcg(29);
        for _ in 0..20 {
            let tree = random_tree(&mut rng, m, 3, l);
            let a = sum_bank.encode(&sum_store, &tree).unwrap();
            let b = full_bank.encode(&full_store, &tree).unwrap();
            assert!(max_abs_diff(&a.h, &b.h) <= 1e-10);
            assert!(max_abs_diff(&a.c_mem, &b.c_mem) <= 1e-10);
        }
    }

    /// Full-rank Tucker factors reconstructing each gate tensor make the
    /// factored bank agree with the full bank.
    #[test]
    fn full_rank_hosvd_bank_equals_full_bank() {
        let (c, l, m) = (3, 2, 2);
        let mut full_store = ParamStore::new();
        let full_bank = CellBank::init(
            &mut full_store,
            cfg(AggregatorKind::Full, c, l, m, None),
            &mut random_init(31),
        );

        let mut hosvd_store = ParamStore::new();
        let hosvd_bank = CellBank::init(
            &mut hosvd_store,
            cfg(AggregatorKind::Hosvd, c, l, m, Some(c)),
            &mut zeros_init(),
        );
        for name in [
            "leaf.i.w", "leaf.i.b", "leaf.o.w", "leaf.o.b", "leaf.u.w", "leaf.u.b",
        ] {
            let src = full_store.lookup(name).unwrap();
            let dst = hosvd_store.lookup(name).unwrap();
            *hosvd_store.value_mut(dst) = full_store.value(src).clone();
        }
        for k in 0..2 {
            for j in 0..l {
                for field in ["u", "b"] {
                    let name = format!("op{k}.f{j}.{field}");
                    let src = full_store.lookup(&name).unwrap();
                    let dst = hosvd_store.lookup(&name).unwrap();
                    *hosvd_store.value_mut(dst) = full_store.value(src).clone();
                }
            }
            for gate in ["i", "o", "u"] {
                let spec = AggregatorSpec::full(c, l, 0);
                let ids = AggParamIds::Full {
                    tensor: full_store.lookup(&format!("op{k}.{gate}.t")).unwrap(),
                };
                let crate::agg::AggParams::Full(fp) = ids.snapshot(&full_store, &spec) else {
                    unreachable!()
                };
                let factors = TuckerFactors::from_map(&fp.map);
                let write = |store: &mut ParamStore, name: String, value: DenseTensor| {
                    let id = store.lookup(&name).unwrap();
                    *store.value_mut(id) = value;
                };
                for (j, u) in factors.context_modes().iter().enumerate() {
                    write(&mut hosvd_store, format!("op{k}.{gate}.u{j}"), u.clone());
                }
                write(&mut hosvd_store, format!("op{k}.{gate}.g"), factors.core().clone());
                write(
                    &mut hosvd_store,
                    format!("op{k}.{gate}.q"),
                    factors.output_mode().clone(),
                );
            }
        }

        let mut rng = pcg(37);
        for _ in 0..10 {
            let tree = random_tree(&mut rng, m, 3, l);
            let a = full_bank.encode(&full_store, &tree).unwrap();
            let b = hosvd_bank.encode(&hosvd_store, &tree).unwrap();
            assert!(max_abs_diff(&a.h, &b.h) <= 1e-8);
            assert!(max_abs_diff(&a.c_mem, &b.c_mem) <= 1e-8);
        }
    }

    pub(crate) fn random_tree(rng: &mut impl Rng, m: usize, depth: usize, l: usize) -> Tree {
        if depth <= 1 || rng.random_range(0..4) == 0 {
            return Tree::leaf((0..m).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        let arity = rng.random_range(1..=l);
        let children = (0..arity)
            .map(|_| random_tree(rng, m, depth - 1, l))
            .collect();
        Tree::internal(rng.random_range(0..2), children)
    }

    #[test]
    fn cell_forward_rejects_bad_inputs() {
        let mut store = ParamStore::new();
        let bank = CellBank::init(
            &mut store,
            cfg(AggregatorKind::Sum, 2, 2, 1, None),
            &mut zeros_init(),
        );
        let s = LstmState {
            h: vec![0.0; 2],
            c_mem: vec![0.0; 2],
        };
        assert!(matches!(
            bank.cell_forward(&store, 9, std::slice::from_ref(&s)),
            Err(ModelError::UnknownOperator { .. })
        ));
        assert!(matches!(
            bank.cell_forward(&store, 0, &[s.clone(), s.clone(), s.clone()]),
            Err(ModelError::TooManyChildren { .. })
        ));
        assert!(matches!(
            bank.encode(&store, &Tree::leaf(vec![1.0, 2.0, 3.0])),
            Err(ModelError::PayloadDim { .. })
        ));
    }

    #[test]
    fn lrt_head_zero_params_give_zero_logits() {
        let mut store = ParamStore::new();
        let head = LrtHead::init(&mut store, 3, 4, &mut zeros_init());
        let mut tape = Tape::new(&store);
        let hl = tape.const_vec(&[0.4, -0.2, 0.9]);
        let hr = tape.const_vec(&[-0.5, 0.1, 0.3]);
        let logits = head.record(&mut tape, hl, hr);
        assert_eq!(tape.value(logits).data(), &[0.0; LRT_CLASSES]);
    }

    #[test]
    fn lrt_head_hand_bilinear_unit() {
        // k=1, c=1, B=[[1]], everything else zero except a passthrough
        // output row: unit activation = leakyrelu(2 * 3) = 6
        let mut store = ParamStore::new();
        let head = LrtHead::init(&mut store, 1, 1, &mut zeros_init());
        store.value_mut(head.forms).data_mut()[0] = 1.0;
        store.value_mut(head.out_w).data_mut()[0] = 1.0;
        let mut tape = Tape::new(&store);
        let hl = tape.const_vec(&[2.0]);
        let hr = tape.const_vec(&[3.0]);
        let logits = head.record(&mut tape, hl, hr);
        assert_eq!(tape.value(logits).data()[0], 6.0);
    }

    #[test]
    fn leaky_relu_matches_published_form() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.const_vec(&[-1.0, 2.0, 0.0]);
        let y = tape.leaky_relu(x);
        assert_eq!(tape.value(y).data(), &[-0.01, 2.0, 0.0]);
    }

    #[test]
    fn listops_head_matches_straight_line_oracle() {
        let c = 5;
        let mut store = ParamStore::new();
        let head = ListopsHead::init(&mut store, c, &mut random_init(41));
        let mut rng = pcg(43);
        let h: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();

        // independent straight-line evaluation
        let lrelu = |x: f64| if x > 0.0 { x } else { 0.01 * x };
        let apply = |store: &ParamStore, w: ParamId, b: ParamId, x: &[f64]| -> Vec<f64> {
            let wt = store.value(w);
            let bt = store.value(b);
            let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
            (0..rows)
                .map(|r| {
                    let mut acc = bt.data()[r];
                    for (i, xi) in x.iter().enumerate().take(cols) {
                        acc += wt.data()[r * cols + i] * xi;
                    }
                    acc
                })
                .collect()
        };
        let z1: Vec<f64> = apply(&store, head.w1, head.b1, &h).into_iter().map(lrelu).collect();
        let z2: Vec<f64> = apply(&store, head.w2, head.b2, &z1).into_iter().map(lrelu).collect();
        let expect = apply(&store, head.w3, head.b3, &z2);

        let mut tape = Tape::new(&store);
        let hn = tape.const_vec(&h);
        let logits = head.record(&mut tape, hn);
        assert!(max_abs_diff(tape.value(logits).data(), &expect) <= 1e-12);
    }

    #[test]
    fn listops_head_zero_params_give_zero_logits() {
        let mut store = ParamStore::new();
        let head = ListopsHead::init(&mut store, 4, &mut zeros_init());
        let mut tape = Tape::new(&store);
        let h = tape.const_vec(&[1.0, -2.0, 0.5, 0.25]);
        let logits = head.record(&mut tape, h);
        assert_eq!(tape.value(logits).data(), &[0.0; LISTOPS_CLASSES]);
    }

    #[test]
    fn listops_head_identity_first_layer_passes_input_through() {
        let c = LISTOPS_HEAD_HIDDEN;
        let mut store = ParamStore::new();
        let head = ListopsHead::init(&mut store, c, &mut zeros_init());
        for i in 0..c {
            store.value_mut(head.w1).data_mut()[i * c + i] = 1.0;
        }
        // non-negative input so the activation is exactly the identity
        let h: Vec<f64> = (0..c).map(|i| i as f64 / 10.0).collect();
        let mut tape = Tape::new(&store);
        let hn = tape.const_vec(&h);
        let w1 = tape.param(head.w1);
        let b1 = tape.param(head.b1);
        let a1 = tape.matvec(w1, hn);
        let pre = tape.add(a1, b1);
        let z1 = tape.leaky_relu(pre);
        assert_eq!(tape.value(z1).data(), h.as_slice());
    }

    #[test]
    fn encoder_gradients_pass_finite_differences() {
        use crate::autodiff::finite_diff_check;
        for (kind, rank) in [
            (AggregatorKind::Sum, None),
            (AggregatorKind::Full, None),
            (AggregatorKind::Hosvd, Some(2)),
        ] {
            let mut store = ParamStore::new();
            let bank = CellBank::init(
                &mut store,
                cfg(kind, 3, 2, 2, rank),
                &mut random_init(47),
            );
            let tree = Tree::internal(
                0,
                vec![
                    Tree::internal(1, vec![Tree::leaf(vec![0.2, -0.4]), Tree::leaf(vec![0.6, 0.1])]),
                    Tree::leaf(vec![-0.3, 0.8]),
                ],
            );
            let err = finite_diff_check(&mut store, 1e-5, |tape| {
                let (h, _c) = bank.record_encode(tape, &tree).unwrap();
                let sq = tape.sum_squares(h);
                tape.scale(sq, 0.5)
            })
            .unwrap();
            assert!(err <= 1e-4, "{kind:?} encoder fd error {err}");
        }
    }
}
