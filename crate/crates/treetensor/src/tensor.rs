//! Dense N-way tensors and the contraction primitives behind every state
//! transition: multi-affine application over homogeneous coordinates,
//! mode-n products, and Tucker (core + mode matrices) application and
//! reconstruction.
//!
//! Storage is row-major `f64` throughout. All operations are pure: they
//! never mutate their operands and produce bit-identical results for
//! identical inputs.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape must be non-empty")]
    EmptyShape,
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?} (expected {expected})")]
    DataLen {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("mode {mode} out of range for {ndim}-way tensor")]
    ModeOutOfRange { mode: usize, ndim: usize },
    #[error("{context}: expected dimension {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{context}: expected {expected} inputs, got {got}")]
    ArityMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
}

/// N-way real array in row-major order. The storage substrate for all
/// maps and learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        if shape.is_empty() {
            return Err(ShapeError::EmptyShape);
        }
        if shape.contains(&0) {
            return Err(ShapeError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(ShapeError::DataLen {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        assert!(!shape.is_empty() && n > 0, "invalid tensor shape {shape:?}");
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty());
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < ext, "index {ix} out of range at mode {i}");
            let _ = i;
            flat = flat * ext + ix;
        }
        flat
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: f64) {
        let o = self.offset(index);
        self.data[o] = v;
    }
}

/// `out = mat * v` for a row-major `[rows, cols]` matrix.
pub fn matvec(mat: &DenseTensor, v: &[f64]) -> Result<Vec<f64>, ShapeError> {
    if mat.ndim() != 2 {
        return Err(ShapeError::DimMismatch {
            context: "matvec matrix rank",
            expected: 2,
            got: mat.ndim(),
        });
    }
    let (rows, cols) = (mat.shape[0], mat.shape[1]);
    if v.len() != cols {
        return Err(ShapeError::DimMismatch {
            context: "matvec input length",
            expected: cols,
            got: v.len(),
        });
    }
    let mut out = vec![0.0; rows];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &mat.data[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o = acc;
    }
    Ok(out)
}

/// Contracts `v` against mode `mode` of `t`, removing that mode.
///
/// `out(i_0.., i_{mode-1}, i_{mode+1}, ..) = sum_j t(.., j, ..) v(j)`.
/// Returns a scalar-shaped `[1]` tensor when `t` is 1-way.
pub fn contract_mode(t: &DenseTensor, mode: usize, v: &[f64]) -> Result<DenseTensor, ShapeError> {
    if mode >= t.ndim() {
        return Err(ShapeError::ModeOutOfRange {
            mode,
            ndim: t.ndim(),
        });
    }
    let extent = t.shape[mode];
    if v.len() != extent {
        return Err(ShapeError::DimMismatch {
            context: "contract_mode vector length",
            expected: extent,
            got: v.len(),
        });
    }
    let inner: usize = t.shape[mode + 1..].iter().product();
    let outer: usize = t.shape[..mode].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for (j, &w) in v.iter().enumerate() {
            let src = &t.data[(o * extent + j) * inner..(o * extent + j + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    let mut shape: Vec<usize> = t.shape.clone();
    shape.remove(mode);
    if shape.is_empty() {
        shape.push(1);
    }
    DenseTensor::new(shape, out)
}

/// Standard mode-n product: replaces the extent at `mode` with the row
/// count of `mat` (`[rows, t.shape[mode]]`).
pub fn mode_product(
    t: &DenseTensor,
    mat: &DenseTensor,
    mode: usize,
) -> Result<DenseTensor, ShapeError> {
    if mode >= t.ndim() {
        return Err(ShapeError::ModeOutOfRange {
            mode,
            ndim: t.ndim(),
        });
    }
    if mat.ndim() != 2 {
        return Err(ShapeError::DimMismatch {
            context: "mode_product matrix rank",
            expected: 2,
            got: mat.ndim(),
        });
    }
    let (rows, cols) = (mat.shape[0], mat.shape[1]);
    let extent = t.shape[mode];
    if cols != extent {
        return Err(ShapeError::DimMismatch {
            context: "mode_product inner dimension",
            expected: extent,
            got: cols,
        });
    }
    let inner: usize = t.shape[mode + 1..].iter().product();
    let outer: usize = t.shape[..mode].iter().product();
    let mut out = vec![0.0; outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for j in 0..extent {
                let w = mat.data[r * extent + j];
                if w == 0.0 {
                    continue;
                }
                let src = &t.data[(o * extent + j) * inner..(o * extent + j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut shape = t.shape.clone();
    shape[mode] = rows;
    DenseTensor::new(shape, out)
}

/// Appends the homogeneous 1 to a vector.
pub fn augment(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.extend_from_slice(v);
    out.push(1.0);
    out
}

/// Contracts every leading mode of `data`/`shape` against the given
/// vectors in order, leaving the trailing modes untouched.
///
/// Shared kernel for multi-affine application and its adjoints: always
/// peels the *first* remaining mode, which is a contiguous slab `axpy`.
pub(crate) fn contract_leading(data: &[f64], shape: &[usize], vectors: &[&[f64]]) -> Vec<f64> {
    debug_assert!(vectors.len() <= shape.len());
    let mut cur: Vec<f64>;
    let mut slab: usize = shape[1..].iter().product();
    {
        let v = vectors[0];
        debug_assert_eq!(v.len(), shape[0]);
        cur = vec![0.0; slab];
        for (j, &w) in v.iter().enumerate() {
            let src = &data[j * slab..(j + 1) * slab];
            for (d, s) in cur.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    for (k, v) in vectors.iter().enumerate().skip(1) {
        let extent = shape[k];
        debug_assert_eq!(v.len(), extent);
        slab /= extent;
        let mut next = vec![0.0; slab];
        for (j, &w) in v.iter().enumerate() {
            let src = &cur[j * slab..(j + 1) * slab];
            for (d, s) in next.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        cur = next;
    }
    cur
}

/// Multi-affine map realized by an augmented tensor over homogeneous
/// coordinates.
///
/// The tensor has one mode of extent `label_dim + 1` when a label input
/// is present (omitted when `label_dim == 0`), `context_size` modes of
/// extent `hidden_dim + 1`, and a final output mode of extent
/// `hidden_dim`. Every input is extended with a trailing 1 before
/// contraction, so each tensor slice carries both linear weights and the
/// bias for its slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAffineMap {
    context_size: usize,
    hidden_dim: usize,
    label_dim: usize,
    aug_tensor: DenseTensor,
}

impl MultiAffineMap {
    pub fn new(
        label_dim: usize,
        context_size: usize,
        hidden_dim: usize,
        aug_tensor: DenseTensor,
    ) -> Result<Self, ShapeError> {
        let expected = Self::tensor_shape(label_dim, context_size, hidden_dim);
        if aug_tensor.shape() != expected.as_slice() {
            return Err(ShapeError::DimMismatch {
                context: "multi-affine tensor shape",
                expected: expected.iter().product(),
                got: aug_tensor.numel(),
            });
        }
        Ok(Self {
            context_size,
            hidden_dim,
            label_dim,
            aug_tensor,
        })
    }

    /// Zero map with the right augmented shape.
    pub fn zeros(label_dim: usize, context_size: usize, hidden_dim: usize) -> Self {
        let shape = Self::tensor_shape(label_dim, context_size, hidden_dim);
        Self {
            context_size,
            hidden_dim,
            label_dim,
            aug_tensor: DenseTensor::zeros(shape),
        }
    }

    pub fn tensor_shape(label_dim: usize, context_size: usize, hidden_dim: usize) -> Vec<usize> {
        let mut shape = Vec::with_capacity(context_size + 2);
        if label_dim > 0 {
            shape.push(label_dim + 1);
        }
        shape.extend(std::iter::repeat_n(hidden_dim + 1, context_size));
        shape.push(hidden_dim);
        shape
    }

    pub fn context_size(&self) -> usize {
        self.context_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.aug_tensor
    }

    pub fn tensor_mut(&mut self) -> &mut DenseTensor {
        &mut self.aug_tensor
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.aug_tensor
    }
}

/// Applies a multi-affine map: contracts the augmented inputs against the
/// tensor, returning the `hidden_dim` output. No nonlinearity is applied.
pub fn apply_multi_affine(
    map: &MultiAffineMap,
    label: Option<&[f64]>,
    context: &[&[f64]],
) -> Result<Vec<f64>, ShapeError> {
    if context.len() != map.context_size {
        return Err(ShapeError::ArityMismatch {
            context: "multi-affine context",
            expected: map.context_size,
            got: context.len(),
        });
    }
    match (map.label_dim, label) {
        (0, None) => {}
        (0, Some(_)) => {
            return Err(ShapeError::ArityMismatch {
                context: "multi-affine label (map has none)",
                expected: 0,
                got: 1,
            })
        }
        (_, None) => {
            return Err(ShapeError::ArityMismatch {
                context: "multi-affine label",
                expected: 1,
                got: 0,
            })
        }
        (m, Some(x)) if x.len() != m => {
            return Err(ShapeError::DimMismatch {
                context: "multi-affine label length",
                expected: m,
                got: x.len(),
            })
        }
        _ => {}
    }
    for h in context {
        if h.len() != map.hidden_dim {
            return Err(ShapeError::DimMismatch {
                context: "multi-affine context length",
                expected: map.hidden_dim,
                got: h.len(),
            });
        }
    }
    let mut augmented: Vec<Vec<f64>> = Vec::with_capacity(map.context_size + 1);
    if let Some(x) = label {
        augmented.push(augment(x));
    }
    for h in context {
        augmented.push(augment(h));
    }
    let views: Vec<&[f64]> = augmented.iter().map(|v| v.as_slice()).collect();
    Ok(contract_leading(
        map.aug_tensor.data(),
        map.aug_tensor.shape(),
        &views,
    ))
}

/// Tucker factorization of a multi-affine map: a small core tensor mixing
/// all inputs in rank-`r` space, plus per-mode matrices.
///
/// Input modes of the core have extent `rank + 1`: each reduced input is
/// extended with a homogeneous 1 before core contraction, preserving
/// per-slot bias capacity. The output mode has extent `rank` and is
/// mapped back to `hidden_dim` by `output_mode`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    rank: usize,
    context_size: usize,
    hidden_dim: usize,
    label_dim: usize,
    /// `rank x label_dim`, present iff `label_dim > 0`.
    label_mode: Option<DenseTensor>,
    /// `context_size` matrices, each `rank x hidden_dim`.
    context_modes: Vec<DenseTensor>,
    /// `[rank+1; inputs, rank]` where `inputs = context_size + (1 if labeled)`.
    core: DenseTensor,
    /// `hidden_dim x rank`.
    output_mode: DenseTensor,
}

impl TuckerFactors {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rank: usize,
        label_dim: usize,
        context_size: usize,
        hidden_dim: usize,
        label_mode: Option<DenseTensor>,
        context_modes: Vec<DenseTensor>,
        core: DenseTensor,
        output_mode: DenseTensor,
    ) -> Result<Self, ShapeError> {
        if rank == 0 {
            return Err(ShapeError::ZeroExtent(vec![0]));
        }
        match (label_dim, &label_mode) {
            (0, None) => {}
            (m, Some(w)) if m > 0 => {
                if w.shape() != [rank, m] {
                    return Err(ShapeError::DimMismatch {
                        context: "tucker label mode shape",
                        expected: rank * m,
                        got: w.numel(),
                    });
                }
            }
            _ => {
                return Err(ShapeError::ArityMismatch {
                    context: "tucker label mode presence",
                    expected: usize::from(label_dim > 0),
                    got: usize::from(label_mode.is_some()),
                })
            }
        }
        if context_modes.len() != context_size {
            return Err(ShapeError::ArityMismatch {
                context: "tucker context modes",
                expected: context_size,
                got: context_modes.len(),
            });
        }
        for u in &context_modes {
            if u.shape() != [rank, hidden_dim] {
                return Err(ShapeError::DimMismatch {
                    context: "tucker context mode shape",
                    expected: rank * hidden_dim,
                    got: u.numel(),
                });
            }
        }
        let expected_core = Self::core_shape(rank, label_dim, context_size);
        if core.shape() != expected_core.as_slice() {
            return Err(ShapeError::DimMismatch {
                context: "tucker core shape",
                expected: expected_core.iter().product(),
                got: core.numel(),
            });
        }
        if output_mode.shape() != [hidden_dim, rank] {
            return Err(ShapeError::DimMismatch {
                context: "tucker output mode shape",
                expected: hidden_dim * rank,
                got: output_mode.numel(),
            });
        }
        Ok(Self {
            rank,
            context_size,
            hidden_dim,
            label_dim,
            label_mode,
            context_modes,
            core,
            output_mode,
        })
    }

    pub fn core_shape(rank: usize, label_dim: usize, context_size: usize) -> Vec<usize> {
        let inputs = context_size + usize::from(label_dim > 0);
        let mut shape = vec![rank + 1; inputs];
        shape.push(rank);
        shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn context_size(&self) -> usize {
        self.context_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn label_mode(&self) -> Option<&DenseTensor> {
        self.label_mode.as_ref()
    }

    pub fn context_modes(&self) -> &[DenseTensor] {
        &self.context_modes
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn output_mode(&self) -> &DenseTensor {
        &self.output_mode
    }

    /// Full-rank factors reproducing `map` exactly: identity-embedded mode
    /// matrices with `rank = max(hidden_dim, label_dim)` and the map's
    /// tensor copied into the core. Reconstruction is exact, so this
    /// realizes the no-compression worst case.
    pub fn from_map(map: &MultiAffineMap) -> Self {
        let c = map.hidden_dim;
        let m = map.label_dim;
        let l = map.context_size;
        let r = c.max(m);

        let eye_embed = |dim: usize| {
            // rank x dim, identity in the top block
            let mut t = DenseTensor::zeros(vec![r, dim]);
            for i in 0..dim.min(r) {
                t.set(&[i, i], 1.0);
            }
            t
        };
        let label_mode = (m > 0).then(|| eye_embed(m));
        let context_modes = vec![eye_embed(c); l];
        let mut output_mode = DenseTensor::zeros(vec![c, r]);
        for i in 0..c {
            output_mode.set(&[i, i], 1.0);
        }

        // Core: map tensor entries at their original multi-indices, with
        // each slot's homogeneous index (extent d+1, last position) moved
        // to the core's last position (extent r+1); zero elsewhere.
        let inputs = l + usize::from(m > 0);
        let core_shape = Self::core_shape(r, m, l);
        let mut core = DenseTensor::zeros(core_shape);
        let src = map.tensor();
        let src_shape = src.shape().to_vec();
        let mut idx = vec![0usize; src_shape.len()];
        for (flat, &v) in src.data().iter().enumerate() {
            if v != 0.0 {
                unflatten(flat, &src_shape, &mut idx);
                let mut core_idx = Vec::with_capacity(inputs + 1);
                for (s, &i) in idx[..inputs].iter().enumerate() {
                    let d = src_shape[s] - 1; // un-augmented extent of slot s
                    core_idx.push(if i == d { r } else { i });
                }
                core_idx.push(idx[inputs]);
                core.set(&core_idx, v);
            }
        }

        Self {
            rank: r,
            context_size: l,
            hidden_dim: c,
            label_dim: m,
            label_mode,
            context_modes,
            core,
            output_mode,
        }
    }
}

fn unflatten(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for (i, &e) in shape.iter().enumerate().rev() {
        out[i] = flat % e;
        flat /= e;
    }
}

/// Applies Tucker-factored transition: reduces each input through its
/// mode matrix, augments with 1, contracts the core, and maps the rank-r
/// result to the hidden space. No nonlinearity is applied.
pub fn tucker_apply(
    f: &TuckerFactors,
    label: Option<&[f64]>,
    context: &[&[f64]],
) -> Result<Vec<f64>, ShapeError> {
    if context.len() != f.context_size {
        return Err(ShapeError::ArityMismatch {
            context: "tucker context",
            expected: f.context_size,
            got: context.len(),
        });
    }
    let mut reduced: Vec<Vec<f64>> = Vec::with_capacity(f.context_size + 1);
    match (&f.label_mode, label) {
        (Some(w), Some(x)) => reduced.push(augment(&matvec(w, x)?)),
        (None, None) => {}
        _ => {
            return Err(ShapeError::ArityMismatch {
                context: "tucker label",
                expected: usize::from(f.label_dim > 0),
                got: usize::from(label.is_some()),
            })
        }
    }
    for (u, h) in f.context_modes.iter().zip(context) {
        reduced.push(augment(&matvec(u, h)?));
    }
    let views: Vec<&[f64]> = reduced.iter().map(|v| v.as_slice()).collect();
    let y = contract_leading(f.core.data(), f.core.shape(), &views);
    matvec(&f.output_mode, &y)
}

/// Materializes the full augmented tensor represented by Tucker factors.
///
/// Each input mode matrix is embedded in augmented coordinates by block
/// structure: reduced coordinates map through the mode matrix and the
/// homogeneous coordinate maps to the core's last slot. The result
/// satisfies `apply_multi_affine(reconstruct(f), ..) == tucker_apply(f, ..)`
/// as an algebraic identity.
pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<MultiAffineMap, ShapeError> {
    let r = f.rank;
    // (d+1) x (r+1): top-left block is the transposed mode matrix,
    // bottom-right corner is the homogeneous passthrough.
    let aug_transposed = |mode: &DenseTensor| {
        let d = mode.shape()[1];
        let mut a = DenseTensor::zeros(vec![d + 1, r + 1]);
        for i in 0..d {
            for j in 0..r {
                a.set(&[i, j], mode.get(&[j, i]));
            }
        }
        a.set(&[d, r], 1.0);
        a
    };

    let mut t = f.core.clone();
    let mut mode = 0;
    if let Some(w) = &f.label_mode {
        t = mode_product(&t, &aug_transposed(w), mode)?;
        mode += 1;
    }
    for u in &f.context_modes {
        t = mode_product(&t, &aug_transposed(u), mode)?;
        mode += 1;
    }
    t = mode_product(&t, &f.output_mode, mode)?;
    MultiAffineMap::new(f.label_dim, f.context_size, f.hidden_dim, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::pcg;
    use rand::{Rng, RngExt};

    fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> DenseTensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseTensor::new(shape, data).unwrap()
    }

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(matches!(
            DenseTensor::new(vec![], vec![]),
            Err(ShapeError::EmptyShape)
        ));
        assert!(matches!(
            DenseTensor::new(vec![2, 0], vec![]),
            Err(ShapeError::ZeroExtent(_))
        ));
        assert!(matches!(
            DenseTensor::new(vec![2, 2], vec![0.0; 3]),
            Err(ShapeError::DataLen { .. })
        ));
    }

    #[test]
    fn pure_bias_tensor_returns_bias_for_any_input() {
        // all entries zero except the all-homogeneous slice, which holds b
        let (m, l, c) = (2, 2, 3);
        let b = [0.5, -1.25, 2.0];
        let mut map = MultiAffineMap::zeros(m, l, c);
        for (k, &bk) in b.iter().enumerate() {
            map.tensor_mut().set(&[m, c, c, k], bk);
        }
        let mut rng = pcg(11);
        for _ in 0..10 {
            let x = random_vec(&mut rng, m);
            let h1 = random_vec(&mut rng, c);
            let h2 = random_vec(&mut rng, c);
            let out = apply_multi_affine(&map, Some(&x), &[&h1, &h2]).unwrap();
            assert_eq!(out, b.to_vec());
        }
    }

    #[test]
    fn hand_contraction_two_scalars() {
        // L=2, c=1, m=0, single nonzero T(1,1,1)=1: output = h1*h2
        let mut map = MultiAffineMap::zeros(0, 2, 1);
        map.tensor_mut().set(&[0, 0, 0], 1.0);
        let out = apply_multi_affine(&map, None, &[&[2.0], &[3.0]]).unwrap();
        assert_eq!(out, vec![6.0]);
    }

    #[test]
    fn apply_rejects_mismatched_inputs() {
        let map = MultiAffineMap::zeros(0, 2, 3);
        let h = [0.0; 3];
        assert!(apply_multi_affine(&map, None, &[&h]).is_err());
        assert!(apply_multi_affine(&map, Some(&h), &[&h, &h]).is_err());
        let short = [0.0; 2];
        assert!(apply_multi_affine(&map, None, &[&h, &short]).is_err());
    }

    #[test]
    fn mode_product_identity_is_identity() {
        let mut rng = pcg(3);
        let t = random_tensor(&mut rng, vec![3, 4, 2]);
        for mode in 0..3 {
            let e = t.shape()[mode];
            let mut eye = DenseTensor::zeros(vec![e, e]);
            for i in 0..e {
                eye.set(&[i, i], 1.0);
            }
            let out = mode_product(&t, &eye, mode).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_hand_case() {
        // 2x2x2 all-ones tensor, mode 0, mat=[[1,1]] -> 1x2x2 of all 2s
        let t = DenseTensor::new(vec![2, 2, 2], vec![1.0; 8]).unwrap();
        let mat = DenseTensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let out = mode_product(&t, &mat, 0).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[2.0; 4]);
    }

    #[test]
    fn mode_products_along_distinct_modes_commute() {
        let mut rng = pcg(17);
        for _ in 0..20 {
            let t = random_tensor(&mut rng, vec![3, 2, 4]);
            let a = random_tensor(&mut rng, vec![2, 3]);
            let b = random_tensor(&mut rng, vec![5, 4]);
            let ab = mode_product(&mode_product(&t, &a, 0).unwrap(), &b, 2).unwrap();
            let ba = mode_product(&mode_product(&t, &b, 2).unwrap(), &a, 0).unwrap();
            assert_eq!(ab.shape(), ba.shape());
            assert!(max_abs_diff(ab.data(), ba.data()) <= 1e-12);
        }
    }

    #[test]
    fn mode_product_errors() {
        let t = DenseTensor::zeros(vec![2, 2]);
        let mat = DenseTensor::zeros(vec![2, 3]);
        assert!(matches!(
            mode_product(&t, &mat, 5),
            Err(ShapeError::ModeOutOfRange { .. })
        ));
        assert!(matches!(
            mode_product(&t, &mat, 0),
            Err(ShapeError::DimMismatch { .. })
        ));
    }

    #[test]
    fn contract_mode_matches_matvec_on_matrices() {
        let mut rng = pcg(5);
        let mat = random_tensor(&mut rng, vec![4, 3]);
        let v = random_vec(&mut rng, 3);
        let a = contract_mode(&mat, 1, &v).unwrap();
        let b = matvec(&mat, &v).unwrap();
        assert_eq!(a.data(), b.as_slice());
    }

    #[test]
    fn tucker_zero_core_gives_zero_output() {
        let mut rng = pcg(7);
        let (r, l, c) = (2, 2, 3);
        let f = TuckerFactors::new(
            r,
            0,
            l,
            c,
            None,
            (0..l).map(|_| random_tensor(&mut rng, vec![r, c])).collect(),
            DenseTensor::zeros(TuckerFactors::core_shape(r, 0, l)),
            random_tensor(&mut rng, vec![c, r]),
        )
        .unwrap();
        let h1 = random_vec(&mut rng, c);
        let h2 = random_vec(&mut rng, c);
        let out = tucker_apply(&f, None, &[&h1, &h2]).unwrap();
        assert_eq!(out, vec![0.0; c]);
    }

    #[test]
    fn tucker_rank_one_sums_single_input() {
        // r=1, L=1, m=0: u = ones row, core G(1,1)=1, q = ones column
        // => every output entry equals sum(h)
        let c = 4;
        let u = DenseTensor::new(vec![1, c], vec![1.0; c]).unwrap();
        let mut core = DenseTensor::zeros(vec![2, 1]);
        core.set(&[0, 0], 1.0);
        let q = DenseTensor::new(vec![c, 1], vec![1.0; c]).unwrap();
        let f = TuckerFactors::new(1, 0, 1, c, None, vec![u], core, q).unwrap();
        let h = [0.5, -1.0, 2.0, 3.0];
        let total: f64 = h.iter().sum();
        let out = tucker_apply(&f, None, &[&h]).unwrap();
        for o in out {
            assert!((o - total).abs() <= 1e-12);
        }
    }

    fn random_factors(rng: &mut impl Rng, r: usize, m: usize, l: usize, c: usize) -> TuckerFactors {
        TuckerFactors::new(
            r,
            m,
            l,
            c,
            (m > 0).then(|| random_tensor(rng, vec![r, m])),
            (0..l).map(|_| random_tensor(rng, vec![r, c])).collect(),
            random_tensor(rng, TuckerFactors::core_shape(r, m, l)),
            random_tensor(rng, vec![c, r]),
        )
        .unwrap()
    }

    #[test]
    fn reconstruct_matches_apply_on_random_factors() {
        let mut rng = pcg(23);
        for trial in 0..100 {
            let r = rng.random_range(1..=4);
            let l = rng.random_range(1..=3);
            let c = rng.random_range(1..=6);
            let m = if trial % 2 == 0 { rng.random_range(1..=4) } else { 0 };
            let f = random_factors(&mut rng, r, m, l, c);
            let map = tucker_reconstruct(&f).unwrap();

            let x = (m > 0).then(|| random_vec(&mut rng, m));
            let ctx: Vec<Vec<f64>> = (0..l).map(|_| random_vec(&mut rng, c)).collect();
            let views: Vec<&[f64]> = ctx.iter().map(|v| v.as_slice()).collect();
            let via_factors = tucker_apply(&f, x.as_deref(), &views).unwrap();
            let via_tensor = apply_multi_affine(&map, x.as_deref(), &views).unwrap();
            assert!(
                max_abs_diff(&via_factors, &via_tensor) <= 1e-8,
                "trial {trial}: factored and reconstructed applications disagree"
            );
        }
    }

    #[test]
    fn reconstruct_zero_core_is_zero_tensor() {
        let mut rng = pcg(29);
        let (r, l, c) = (2, 2, 3);
        let f = TuckerFactors::new(
            r,
            0,
            l,
            c,
            None,
            (0..l).map(|_| random_tensor(&mut rng, vec![r, c])).collect(),
            DenseTensor::zeros(TuckerFactors::core_shape(r, 0, l)),
            random_tensor(&mut rng, vec![c, r]),
        )
        .unwrap();
        let map = tucker_reconstruct(&f).unwrap();
        assert!(map.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_rank_factors_reproduce_tensor_exactly() {
        let mut rng = pcg(31);
        for &(m, l, c) in &[(0usize, 2usize, 2usize), (0, 3, 3), (2, 2, 2), (3, 1, 2)] {
            let map = MultiAffineMap::new(
                m,
                l,
                c,
                random_tensor(&mut rng, MultiAffineMap::tensor_shape(m, l, c)),
            )
            .unwrap();
            let f = TuckerFactors::from_map(&map);
            let rec = tucker_reconstruct(&f).unwrap();
            assert_eq!(rec.tensor().shape(), map.tensor().shape());
            assert_eq!(rec.tensor().data(), map.tensor().data());
        }
    }

    #[test]
    fn multi_affinity_in_every_slot() {
        // f(..., alpha*a + (1-alpha)*b, ...) == alpha*f(...,a,...) + (1-alpha)*f(...,b,...)
        let mut rng = pcg(37);
        for trial in 0..50 {
            let l = rng.random_range(1..=3);
            let c = rng.random_range(1..=5);
            let m = if trial % 2 == 0 { rng.random_range(1..=3) } else { 0 };
            let map = MultiAffineMap::new(
                m,
                l,
                c,
                random_tensor(&mut rng, MultiAffineMap::tensor_shape(m, l, c)),
            )
            .unwrap();
            let slots = l + usize::from(m > 0);
            let slot = rng.random_range(0..slots);
            let dim = if m > 0 && slot == 0 { m } else { c };
            let alpha: f64 = rng.random_range(-2.0..2.0);
            let a = random_vec(&mut rng, dim);
            let b = random_vec(&mut rng, dim);
            let mix: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect();

            let base: Vec<Vec<f64>> = (0..slots)
                .map(|s| {
                    let d = if m > 0 && s == 0 { m } else { c };
                    random_vec(&mut rng, d)
                })
                .collect();
            let eval = |slot_val: &[f64]| {
                let mut inputs: Vec<&[f64]> = base.iter().map(|v| v.as_slice()).collect();
                inputs[slot] = slot_val;
                let (label, ctx) = if m > 0 {
                    (Some(inputs[0]), &inputs[1..])
                } else {
                    (None, &inputs[..])
                };
                apply_multi_affine(&map, label, ctx).unwrap()
            };

            let fm = eval(&mix);
            let fa = eval(&a);
            let fb = eval(&b);
            let combo: Vec<f64> = fa
                .iter()
                .zip(&fb)
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect();
            assert!(
                max_abs_diff(&fm, &combo) <= 1e-9,
                "trial {trial}: affinity violated in slot {slot}"
            );
        }
    }

    #[test]
    fn contractions_are_bitwise_deterministic() {
        let mut rng = pcg(41);
        let map = MultiAffineMap::new(
            2,
            2,
            4,
            random_tensor(&mut rng, MultiAffineMap::tensor_shape(2, 2, 4)),
        )
        .unwrap();
        let x = random_vec(&mut rng, 2);
        let h1 = random_vec(&mut rng, 4);
        let h2 = random_vec(&mut rng, 4);
        let a = apply_multi_affine(&map, Some(&x), &[&h1, &h2]).unwrap();
        let b = apply_multi_affine(&map, Some(&x), &[&h1, &h2]).unwrap();
        assert_eq!(a, b);
    }
}
