//! Child-state aggregation functions behind a single interface: weighted
//! sum, full augmented tensor, and the Tucker-factored approximation,
//! plus the sparse embedding of sum parameters into a full tensor and
//! exact parameter accounting under both published conventions.

use rand::Rng;

use crate::autodiff::{NodeRef, ParamId, ParamStore, Tape, TuckerRefs};
use crate::tensor::{
    apply_multi_affine, tucker_apply, DenseTensor, MultiAffineMap, ShapeError, TuckerFactors,
};

/// Aggregation function family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Sum,
    Full,
    Hosvd,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Sum => "sum",
            AggregatorKind::Full => "full",
            AggregatorKind::Hosvd => "hosvd",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(AggregatorKind::Sum),
            "full" => Ok(AggregatorKind::Full),
            "hosvd" => Ok(AggregatorKind::Hosvd),
            other => Err(format!("unknown aggregator {other:?} (expected sum|full|hosvd)")),
        }
    }
}

/// Dimensions of one aggregation function: hidden size `c`, context size
/// `L`, label dimension `m` (0 for operator-sliced use), and the rank
/// `r` for the Tucker approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    pub hidden_dim: usize,
    pub context_size: usize,
    pub label_dim: usize,
    pub rank: Option<usize>,
}

impl AggregatorSpec {
    pub fn new(
        kind: AggregatorKind,
        hidden_dim: usize,
        context_size: usize,
        label_dim: usize,
        rank: Option<usize>,
    ) -> Result<Self, String> {
        if hidden_dim == 0 || context_size == 0 {
            return Err("hidden_dim and context_size must be >= 1".into());
        }
        match (kind, rank) {
            (AggregatorKind::Hosvd, Some(r)) if r >= 1 => {}
            (AggregatorKind::Hosvd, _) => return Err("hosvd requires rank >= 1".into()),
            (_, Some(_)) => return Err("rank is only meaningful for hosvd".into()),
            (_, None) => {}
        }
        Ok(Self {
            kind,
            hidden_dim,
            context_size,
            label_dim,
            rank,
        })
    }

    pub fn sum(hidden_dim: usize, context_size: usize, label_dim: usize) -> Self {
        Self::new(AggregatorKind::Sum, hidden_dim, context_size, label_dim, None).unwrap()
    }

    pub fn full(hidden_dim: usize, context_size: usize, label_dim: usize) -> Self {
        Self::new(AggregatorKind::Full, hidden_dim, context_size, label_dim, None).unwrap()
    }

    pub fn hosvd(hidden_dim: usize, context_size: usize, label_dim: usize, rank: usize) -> Self {
        Self::new(AggregatorKind::Hosvd, hidden_dim, context_size, label_dim, Some(rank)).unwrap()
    }
}

/// Weighted-sum parameters: `W x + sum_j U_j h_j + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumParams {
    /// `hidden_dim x label_dim`, absent when `label_dim == 0`.
    pub label_map: Option<DenseTensor>,
    /// One `hidden_dim x hidden_dim` matrix per context slot.
    pub child_maps: Vec<DenseTensor>,
    pub bias: Vec<f64>,
}

/// Full-tensor parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FullParams {
    pub map: MultiAffineMap,
}

/// Tucker-factored parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HosvdParams {
    pub factors: TuckerFactors,
}

/// Value-level parameters for one aggregation function.
#[derive(Debug, Clone, PartialEq)]
pub enum AggParams {
    Sum(SumParams),
    Full(FullParams),
    Hosvd(HosvdParams),
}

/// Applies an aggregation function to a padded context. The caller pads
/// the context to exactly `L` vectors (zeros for absent slots) and
/// applies the nonlinearity afterwards.
pub fn aggregate(
    params: &AggParams,
    label: Option<&[f64]>,
    context: &[&[f64]],
) -> Result<Vec<f64>, ShapeError> {
    match params {
        AggParams::Sum(p) => {
            let c = p.bias.len();
            let mut out = p.bias.clone();
            match (&p.label_map, label) {
                (Some(w), Some(x)) => {
                    for (o, wx) in out.iter_mut().zip(crate::tensor::matvec(w, x)?) {
                        *o += wx;
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(ShapeError::ArityMismatch {
                        context: "sum aggregator label",
                        expected: usize::from(p.label_map.is_some()),
                        got: usize::from(label.is_some()),
                    })
                }
            }
            if context.len() != p.child_maps.len() {
                return Err(ShapeError::ArityMismatch {
                    context: "sum aggregator context",
                    expected: p.child_maps.len(),
                    got: context.len(),
                });
            }
            for (u, h) in p.child_maps.iter().zip(context) {
                for (o, uh) in out.iter_mut().zip(crate::tensor::matvec(u, h)?) {
                    *o += uh;
                }
            }
            debug_assert_eq!(out.len(), c);
            Ok(out)
        }
        AggParams::Full(p) => apply_multi_affine(&p.map, label, context),
        AggParams::Hosvd(p) => tucker_apply(&p.factors, label, context),
    }
}

/// Embeds sum parameters into the sparse full tensor that computes the
/// identical map: each slot's weights sit where every other input index
/// points at the homogeneous coordinate, the bias at the all-homogeneous
/// entry, zero elsewhere.
pub fn sum_to_tensor(p: &SumParams) -> FullParams {
    let c = p.bias.len();
    let l = p.child_maps.len();
    let m = p.label_map.as_ref().map_or(0, |w| w.shape()[1]);
    let mut map = MultiAffineMap::zeros(m, l, c);
    let has_label = usize::from(m > 0);

    // index buffer over the tensor's input modes, all pointing at the
    // homogeneous slot; entries are written by deviating one mode at a time
    let mut idx = Vec::with_capacity(has_label + l + 1);
    if m > 0 {
        idx.push(m);
    }
    idx.extend(std::iter::repeat_n(c, l));
    idx.push(0);
    let out_pos = idx.len() - 1;

    if let Some(w) = &p.label_map {
        for i in 0..m {
            idx[0] = i;
            for k in 0..c {
                idx[out_pos] = k;
                map.tensor_mut().set(&idx, w.get(&[k, i]));
            }
        }
        idx[0] = m;
    }
    for (j, u) in p.child_maps.iter().enumerate() {
        let mode = has_label + j;
        for i in 0..c {
            idx[mode] = i;
            for k in 0..c {
                idx[out_pos] = k;
                map.tensor_mut().set(&idx, u.get(&[k, i]));
            }
        }
        idx[mode] = c;
    }
    for (k, &b) in p.bias.iter().enumerate() {
        idx[out_pos] = k;
        map.tensor_mut().set(&idx, b);
    }

    FullParams { map }
}

/// Parameter counting convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountConvention {
    /// Reproduces the published per-aggregator table entries exactly:
    /// Full `c(c+1)^L`, Sum `L c^2`, Hosvd `L c r + r(r+1)^L`. Excludes
    /// the label matrix, the sum bias, and the Tucker output matrix.
    PaperTable,
    /// Every learnable scalar: Full `(m+1)(c+1)^L c`, Sum
    /// `c m + L c^2 + c`, Hosvd `m r + (L+1) c r + r(r+1)^(L + [m>0])`,
    /// with `m = 0` terms dropped for operator-sliced use.
    AllScalars,
}

/// Number of parameters in one aggregation function.
pub fn param_count(spec: &AggregatorSpec, convention: CountConvention) -> u64 {
    let c = spec.hidden_dim as u64;
    let l = spec.context_size as u64;
    let m = spec.label_dim as u64;
    let lg = spec.context_size as u32;
    match convention {
        CountConvention::PaperTable => match spec.kind {
            AggregatorKind::Full => c * (c + 1).pow(lg),
            AggregatorKind::Sum => l * c * c,
            AggregatorKind::Hosvd => {
                let r = spec.rank.expect("hosvd spec carries a rank") as u64;
                l * c * r + r * (r + 1).pow(lg)
            }
        },
        CountConvention::AllScalars => match spec.kind {
            AggregatorKind::Full => (m + 1) * (c + 1).pow(lg) * c,
            AggregatorKind::Sum => c * m + l * c * c + c,
            AggregatorKind::Hosvd => {
                let r = spec.rank.expect("hosvd spec carries a rank") as u64;
                let inputs = lg + u32::from(m > 0);
                m * r + (l + 1) * c * r + r * (r + 1).pow(inputs)
            }
        },
    }
}

/// Store-backed parameter handles for one aggregation function.
#[derive(Debug, Clone)]
pub enum AggParamIds {
    Sum {
        label_map: Option<ParamId>,
        child_maps: Vec<ParamId>,
        bias: ParamId,
    },
    Full {
        tensor: ParamId,
    },
    Hosvd {
        label_mode: Option<ParamId>,
        context_modes: Vec<ParamId>,
        core: ParamId,
        output_mode: ParamId,
    },
}

impl AggParamIds {
    /// Registers freshly initialized parameters under `prefix`.
    /// `init(shape, fan_in)` produces weight tensors; biases start at zero.
    pub fn init(
        store: &mut ParamStore,
        spec: &AggregatorSpec,
        prefix: &str,
        init: &mut dyn FnMut(Vec<usize>, usize) -> DenseTensor,
    ) -> Self {
        let (c, l, m) = (spec.hidden_dim, spec.context_size, spec.label_dim);
        match spec.kind {
            AggregatorKind::Sum => AggParamIds::Sum {
                label_map: (m > 0)
                    .then(|| store.add(format!("{prefix}.w"), init(vec![c, m], m))),
                child_maps: (0..l)
                    .map(|j| store.add(format!("{prefix}.u{j}"), init(vec![c, c], c)))
                    .collect(),
                bias: store.add(format!("{prefix}.b"), DenseTensor::zeros(vec![c])),
            },
            AggregatorKind::Full => {
                let shape = MultiAffineMap::tensor_shape(m, l, c);
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                AggParamIds::Full {
                    tensor: store.add(format!("{prefix}.t"), init(shape, fan_in)),
                }
            }
            AggregatorKind::Hosvd => {
                let r = spec.rank.expect("hosvd spec carries a rank");
                let core_shape = TuckerFactors::core_shape(r, m, l);
                let core_fan: usize = core_shape[..core_shape.len() - 1].iter().product();
                AggParamIds::Hosvd {
                    label_mode: (m > 0)
                        .then(|| store.add(format!("{prefix}.w"), init(vec![r, m], m))),
                    context_modes: (0..l)
                        .map(|j| store.add(format!("{prefix}.u{j}"), init(vec![r, c], c)))
                        .collect(),
                    core: store.add(format!("{prefix}.g"), init(core_shape, core_fan)),
                    output_mode: store.add(format!("{prefix}.q"), init(vec![c, r], r)),
                }
            }
        }
    }

    /// Records the aggregation on a tape over the given label/context
    /// nodes. Pre-activation output; the caller applies the nonlinearity.
    pub fn record(
        &self,
        tape: &mut Tape<'_>,
        label: Option<NodeRef>,
        context: &[NodeRef],
    ) -> NodeRef {
        match self {
            AggParamIds::Sum {
                label_map,
                child_maps,
                bias,
            } => {
                assert_eq!(child_maps.len(), context.len(), "sum context arity");
                let mut acc = tape.param(*bias);
                if let (Some(w), Some(x)) = (label_map, label) {
                    let wn = tape.param(*w);
                    let wx = tape.matvec(wn, x);
                    acc = tape.add(acc, wx);
                }
                for (&u, &h) in child_maps.iter().zip(context) {
                    let un = tape.param(u);
                    let uh = tape.matvec(un, h);
                    acc = tape.add(acc, uh);
                }
                acc
            }
            AggParamIds::Full { tensor } => {
                let t = tape.param(*tensor);
                let mut inputs = Vec::with_capacity(context.len() + 1);
                if let Some(x) = label {
                    inputs.push(x);
                }
                inputs.extend_from_slice(context);
                tape.multi_affine(t, &inputs)
            }
            AggParamIds::Hosvd {
                label_mode,
                context_modes,
                core,
                output_mode,
            } => {
                let refs = TuckerRefs {
                    label_mode: label_mode.map(|id| tape.param(id)),
                    context_modes: context_modes.iter().map(|&id| tape.param(id)).collect(),
                    core: tape.param(*core),
                    output_mode: tape.param(*output_mode),
                };
                tape.tucker_apply(&refs, label, context)
            }
        }
    }

    /// Copies current values out of the store.
    pub fn snapshot(&self, store: &ParamStore, spec: &AggregatorSpec) -> AggParams {
        match self {
            AggParamIds::Sum {
                label_map,
                child_maps,
                bias,
            } => AggParams::Sum(SumParams {
                label_map: label_map.map(|id| store.value(id).clone()),
                child_maps: child_maps.iter().map(|&id| store.value(id).clone()).collect(),
                bias: store.value(*bias).data().to_vec(),
            }),
            AggParamIds::Full { tensor } => AggParams::Full(FullParams {
                map: MultiAffineMap::new(
                    spec.label_dim,
                    spec.context_size,
                    spec.hidden_dim,
                    store.value(*tensor).clone(),
                )
                .expect("stored tensor matches spec"),
            }),
            AggParamIds::Hosvd {
                label_mode,
                context_modes,
                core,
                output_mode,
            } => AggParams::Hosvd(HosvdParams {
                factors: TuckerFactors::new(
                    spec.rank.expect("hosvd spec carries a rank"),
                    spec.label_dim,
                    spec.context_size,
                    spec.hidden_dim,
                    label_mode.map(|id| store.value(id).clone()),
                    context_modes.iter().map(|&id| store.value(id).clone()).collect(),
                    store.value(*core).clone(),
                    store.value(*output_mode).clone(),
                )
                .expect("stored factors match spec"),
            }),
        }
    }
}

/// Random sum parameters, for tests and oracles.
pub fn random_sum_params(rng: &mut impl Rng, c: usize, l: usize, m: usize) -> SumParams {
    use rand::RngExt;
    let mut mat = |rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseTensor::new(vec![rows, cols], data).unwrap()
    };
    let label_map = (m > 0).then(|| mat(c, m));
    let child_maps = (0..l).map(|_| mat(c, c)).collect();
    let bias = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    SumParams {
        label_map,
        child_maps,
        bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::pcg;
    use rand::{Rng, RngExt};

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Straight-line evaluation of the weighted sum, independent of the
    /// aggregate implementation path.
    #[allow(clippy::needless_range_loop)]
    fn sum_oracle(p: &SumParams, label: Option<&[f64]>, context: &[&[f64]]) -> Vec<f64> {
        let c = p.bias.len();
        let mut out = p.bias.clone();
        if let (Some(w), Some(x)) = (&p.label_map, label) {
            for k in 0..c {
                for (i, xi) in x.iter().enumerate() {
                    out[k] += w.get(&[k, i]) * xi;
                }
            }
        }
        for (u, h) in p.child_maps.iter().zip(context) {
            for k in 0..c {
                for (i, hi) in h.iter().enumerate() {
                    out[k] += u.get(&[k, i]) * hi;
                }
            }
        }
        out
    }

    #[test]
    fn sum_with_zero_maps_returns_bias() {
        let c = 4;
        let p = AggParams::Sum(SumParams {
            label_map: None,
            child_maps: vec![DenseTensor::zeros(vec![c, c]); 2],
            bias: vec![1.0, -2.0, 0.5, 3.0],
        });
        let mut rng = pcg(1);
        let h1 = random_vec(&mut rng, c);
        let h2 = random_vec(&mut rng, c);
        let out = aggregate(&p, None, &[&h1, &h2]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn sum_to_tensor_hand_case() {
        // L=1, c=1, m=0, U=[[2]], b=[3]: f(h=[5]) = 2*5 + 3 = 13
        let p = SumParams {
            label_map: None,
            child_maps: vec![DenseTensor::new(vec![1, 1], vec![2.0]).unwrap()],
            bias: vec![3.0],
        };
        let full = sum_to_tensor(&p);
        assert_eq!(full.map.tensor().shape(), &[2, 1]);
        assert_eq!(full.map.tensor().data(), &[2.0, 3.0]);
        let out = apply_multi_affine(&full.map, None, &[&[5.0]]).unwrap();
        assert_eq!(out, vec![13.0]);
    }

    #[test]
    fn sum_to_tensor_of_zero_params_is_zero() {
        let p = SumParams {
            label_map: Some(DenseTensor::zeros(vec![3, 2])),
            child_maps: vec![DenseTensor::zeros(vec![3, 3]); 2],
            bias: vec![0.0; 3],
        };
        let full = sum_to_tensor(&p);
        assert!(full.map.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedded_tensor_matches_sum_on_random_instances() {
        let mut rng = pcg(2);
        for trial in 0..100 {
            let c = rng.random_range(1..=8);
            let l = [1, 2, 3, 5][rng.random_range(0..4)];
            let m = if trial % 2 == 0 { rng.random_range(1..=6) } else { 0 };
            let p = random_sum_params(&mut rng, c, l, m);
            let embedded = AggParams::Full(sum_to_tensor(&p));
            let direct = AggParams::Sum(p.clone());

            let x = (m > 0).then(|| random_vec(&mut rng, m));
            let ctx: Vec<Vec<f64>> = (0..l).map(|_| random_vec(&mut rng, c)).collect();
            let views: Vec<&[f64]> = ctx.iter().map(|v| v.as_slice()).collect();

            let via_sum = aggregate(&direct, x.as_deref(), &views).unwrap();
            let via_full = aggregate(&embedded, x.as_deref(), &views).unwrap();
            let oracle = sum_oracle(&p, x.as_deref(), &views);
            assert!(max_abs_diff(&via_sum, &oracle) <= 1e-10, "trial {trial}");
            assert!(max_abs_diff(&via_full, &oracle) <= 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn full_rank_hosvd_collapses_to_full() {
        let mut rng = pcg(3);
        for trial in 0..100 {
            let c = rng.random_range(1..=5);
            let l = rng.random_range(1..=3);
            let m = if trial % 3 == 0 { rng.random_range(1..=3) } else { 0 };
            let shape = MultiAffineMap::tensor_shape(m, l, c);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let map = MultiAffineMap::new(m, l, c, DenseTensor::new(shape, data).unwrap()).unwrap();

            let full = AggParams::Full(FullParams { map: map.clone() });
            let hosvd = AggParams::Hosvd(HosvdParams {
                factors: TuckerFactors::from_map(&map),
            });

            let x = (m > 0).then(|| random_vec(&mut rng, m));
            let ctx: Vec<Vec<f64>> = (0..l).map(|_| random_vec(&mut rng, c)).collect();
            let views: Vec<&[f64]> = ctx.iter().map(|v| v.as_slice()).collect();
            let a = aggregate(&full, x.as_deref(), &views).unwrap();
            let b = aggregate(&hosvd, x.as_deref(), &views).unwrap();
            assert!(max_abs_diff(&a, &b) <= 1e-8, "trial {trial}");
        }
    }

    #[test]
    fn paper_table_full_counts() {
        // validation table, L = 2
        for (c, expect) in [(3, 48), (5, 180), (10, 1210), (20, 8820), (50, 130050), (100, 1020100)]
        {
            let spec = AggregatorSpec::full(c, 2, 0);
            assert_eq!(param_count(&spec, CountConvention::PaperTable), expect);
        }
        // list-operations table, L = 5
        for (c, expect) in [(3, 3072), (5, 38880), (7, 229376)] {
            let spec = AggregatorSpec::full(c, 5, 0);
            assert_eq!(param_count(&spec, CountConvention::PaperTable), expect);
        }
    }

    #[test]
    fn paper_table_sum_counts() {
        for (c, expect) in [(3, 18), (5, 50), (10, 200), (20, 800), (50, 5000), (100, 20000)] {
            let spec = AggregatorSpec::sum(c, 2, 0);
            assert_eq!(param_count(&spec, CountConvention::PaperTable), expect);
        }
        for (c, expect) in [(25, 3125), (88, 38720), (214, 228980)] {
            let spec = AggregatorSpec::sum(c, 5, 0);
            assert_eq!(param_count(&spec, CountConvention::PaperTable), expect);
        }
    }

    #[test]
    fn paper_table_hosvd_counts() {
        for (c, r, expect) in [(10, 7, 588), (20, 15, 4440), (50, 30, 31830), (100, 20, 12820)] {
            let spec = AggregatorSpec::hosvd(c, 2, 0, r);
            assert_eq!(param_count(&spec, CountConvention::PaperTable), expect);
        }
        for (c, expect) in [(10, 3222), (20, 3372), (50, 3822)] {
            let spec = AggregatorSpec::hosvd(c, 5, 0, 3);
            assert_eq!(param_count(&spec, CountConvention::PaperTable), expect);
        }
    }

    #[test]
    fn all_scalars_counts_follow_closed_forms() {
        // labeled
        let full = AggregatorSpec::full(4, 2, 3);
        assert_eq!(param_count(&full, CountConvention::AllScalars), 4 * 25 * 4);
        let sum = AggregatorSpec::sum(10, 2, 4);
        assert_eq!(param_count(&sum, CountConvention::AllScalars), 40 + 210);
        let hosvd = AggregatorSpec::hosvd(5, 2, 3, 2);
        assert_eq!(
            param_count(&hosvd, CountConvention::AllScalars),
            6 + 3 * 10 + 2 * 27
        );
        // operator-sliced (m = 0) drops the label terms and core mode
        let sliced = AggregatorSpec::hosvd(5, 2, 0, 2);
        assert_eq!(
            param_count(&sliced, CountConvention::AllScalars),
            3 * 10 + 2 * 9
        );
        let sum0 = AggregatorSpec::sum(10, 2, 0);
        assert_eq!(param_count(&sum0, CountConvention::AllScalars), 210);
    }

    #[test]
    fn hosvd_table_count_is_monotone_in_rank_and_hidden() {
        let mut prev = 0;
        for r in 1..=10 {
            let n = param_count(&AggregatorSpec::hosvd(20, 5, 0, r), CountConvention::PaperTable);
            assert!(n > prev);
            prev = n;
        }
        let mut prev = 0;
        for c in 1..=10 {
            let n = param_count(&AggregatorSpec::hosvd(c, 5, 0, 3), CountConvention::PaperTable);
            assert!(n > prev);
            prev = n;
        }
    }

    #[test]
    fn init_registers_the_all_scalars_count_minus_biases() {
        // weight scalars registered by init == all-scalars count minus
        // the entries the counting convention attributes to biases
        let mut store = ParamStore::new();
        let spec = AggregatorSpec::hosvd(6, 3, 0, 2);
        let mut init = |shape: Vec<usize>, _fan: usize| DenseTensor::zeros(shape);
        let _ids = AggParamIds::init(&mut store, &spec, "g", &mut init);
        let total = store.total_scalars() as u64;
        // hosvd has no bias vector; counts must agree exactly
        assert_eq!(total, param_count(&spec, CountConvention::AllScalars));

        let mut store = ParamStore::new();
        let spec = AggregatorSpec::sum(6, 3, 4);
        let _ids = AggParamIds::init(&mut store, &spec, "g", &mut init);
        assert_eq!(
            store.total_scalars() as u64,
            param_count(&spec, CountConvention::AllScalars)
        );
    }

    #[test]
    fn recorded_aggregation_matches_pure_aggregation() {
        let mut rng = pcg(5);
        for kind in [AggregatorKind::Sum, AggregatorKind::Full, AggregatorKind::Hosvd] {
            let spec = AggregatorSpec::new(kind, 4, 2, 0, (kind == AggregatorKind::Hosvd).then_some(2))
                .unwrap();
            let mut store = ParamStore::new();
            let mut init = |shape: Vec<usize>, _fan: usize| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                DenseTensor::new(shape, data).unwrap()
            };
            let ids = AggParamIds::init(&mut store, &spec, "g", &mut init);

            let mut vrng = pcg(6);
            let h1 = random_vec(&mut vrng, 4);
            let h2 = random_vec(&mut vrng, 4);
            let pure = aggregate(&ids.snapshot(&store, &spec), None, &[&h1, &h2]).unwrap();

            let mut tape = Tape::new(&store);
            let h1n = tape.const_vec(&h1);
            let h2n = tape.const_vec(&h2);
            let out = ids.record(&mut tape, None, &[h1n, h2n]);
            assert!(max_abs_diff(tape.value(out).data(), &pure) <= 1e-12);
        }
    }

    #[test]
    fn spec_rejects_invalid_combinations() {
        assert!(AggregatorSpec::new(AggregatorKind::Hosvd, 4, 2, 0, None).is_err());
        assert!(AggregatorSpec::new(AggregatorKind::Hosvd, 4, 2, 0, Some(0)).is_err());
        assert!(AggregatorSpec::new(AggregatorKind::Sum, 4, 2, 0, Some(3)).is_err());
        assert!(AggregatorSpec::new(AggregatorKind::Sum, 0, 2, 0, None).is_err());
    }
}
