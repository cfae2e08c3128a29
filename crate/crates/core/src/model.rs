//! Equivariant and invariant Reynolds networks, their reduced variants, and the
//! fully-connected baseline.
//!
//! The equivariant network is
//! `ℰ(X) = Σ_D Σ_{T ∈ 𝒯_{m,D}} (1/|H_D|) Σ_{g ∈ H_D} g^{-1}·(𝒩_T(g·X) ⊗ e_{u_T})`.
//! Each `(T, g)` pair writes the single output slice at `g^{-1}·u_T`, so a
//! forward pass is one MLP call per output index tuple (`n²` for `m = 2`).
//! Everything about a pass except the MLP values is fixed by `n`, so it is
//! compiled once into a per-component [`Plan`] of gather/scatter positions.

use ndarray::{Array2, ArrayView2};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::group::{enumerate_design, Permutation};
use crate::nn::{Mlp, MlpGrads, MlpTrace};
use crate::rng::{self, streams};
use crate::tableau::{all_basis_tableaux, BasisTableau};
use crate::tensor::{orbit_labels, position_of, tuple_at, tuples, DenseTensor};
use crate::{Error, Result};

/// Input coordinates read by each component in a reduced network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedSpec {
    coords: Vec<Vec<usize>>,
    restrict_by_depth: bool,
}

impl ReducedSpec {
    pub fn new(coords: Vec<Vec<usize>>, restrict_by_depth: bool) -> Result<Self> {
        let order = coords
            .first()
            .ok_or_else(|| Error::InvalidArgument("a reduced spec needs coordinates".into()))?
            .len();
        for (k, c) in coords.iter().enumerate() {
            if c.len() != order {
                return Err(Error::SizeMismatch {
                    expected: order,
                    actual: c.len(),
                });
            }
            if c.contains(&0) {
                return Err(Error::IndexOutOfRange { index: 0, n: 0 });
            }
            if coords[..k].contains(c) {
                return Err(Error::InvalidArgument(format!("coordinate {c:?} repeats")));
            }
        }
        Ok(ReducedSpec {
            coords,
            restrict_by_depth,
        })
    }

    /// Every tuple of `[k]^order`, in flat-position order.
    pub fn corners(order: usize, k: usize) -> Result<Self> {
        ReducedSpec::new(tuples(k, order).collect(), false)
    }

    /// `x_{1,1}, x_{1,2}, x_{2,1}, x_{2,2}`.
    pub fn four_corner() -> Self {
        ReducedSpec::corners(2, 2).expect("valid corners")
    }

    /// Components of depth `D` read only the `Stab([D])`-fixed coordinates
    /// `[D]^order`, which makes the network exactly equivariant.
    pub fn stab_restricted(order: usize, m: usize) -> Result<Self> {
        Ok(ReducedSpec {
            restrict_by_depth: true,
            ..ReducedSpec::corners(order, m)?
        })
    }

    pub fn coords(&self) -> &[Vec<usize>] {
        &self.coords
    }

    pub fn order(&self) -> usize {
        self.coords[0].len()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn restrict_by_depth(&self) -> bool {
        self.restrict_by_depth
    }

    pub fn max_index(&self) -> usize {
        self.coords.iter().flatten().copied().max().unwrap_or(0)
    }

    /// The coordinates read by a component of the given depth.
    pub fn coords_for_depth(&self, depth: usize) -> Vec<&[usize]> {
        self.coords
            .iter()
            .filter(|c| !self.restrict_by_depth || c.iter().all(|&i| i <= depth))
            .map(Vec::as_slice)
            .collect()
    }
}

/// `(g·X)` at each spec coordinate, read as `X` at `g^{-1}·c` without building
/// the permuted tensor. Row-major `|coords| x a`.
pub fn reduced_gather(x: &DenseTensor, g: &Permutation, spec: &ReducedSpec) -> Result<Vec<f64>> {
    if g.n() != x.n() || spec.order() != x.order() {
        return Err(Error::Shape(format!(
            "spec of order {} with permutation on [{}] for tensor (n={}, order={})",
            spec.order(),
            g.n(),
            x.n(),
            x.order()
        )));
    }
    let gi = g.inverse();
    let mut out = Vec::with_capacity(spec.len() * x.channels());
    for c in spec.coords() {
        out.extend_from_slice(x.slice_at(&gi.act_index(c)?)?);
    }
    Ok(out)
}

/// Tensor shapes of an equivariant map `R^{n^ℓ x a} -> R^{n^m x b}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivShape {
    pub n: usize,
    pub in_order: usize,
    pub in_channels: usize,
    pub out_order: usize,
    pub out_channels: usize,
}

/// One MLP call: where its input comes from and where its output goes.
#[derive(Clone, Debug)]
struct Slot {
    gather: Vec<usize>,
    out_pos: usize,
}

/// Precomputed design loop of one component; `slots[0]` is `g = id`, whose
/// target is the corner tuple `u_T`.
#[derive(Clone, Debug)]
struct Plan {
    depth: usize,
    scale: f64,
    slots: Vec<Slot>,
}

fn build_plan(shape: &EquivShape, reduced: Option<&ReducedSpec>, t: &BasisTableau) -> Result<Plan> {
    let n = shape.n;
    let design = enumerate_design(n, t.depth())?;
    let base = t.base_tuple();
    let coords: Vec<Vec<usize>> = match reduced {
        Some(spec) => spec.coords_for_depth(t.depth()).into_iter().map(<[usize]>::to_vec).collect(),
        None => tuples(n, shape.in_order).collect(),
    };
    let mut slots = Vec::with_capacity(design.len());
    for g in design.elements() {
        let gi = g.inverse();
        let gather = coords
            .iter()
            .map(|c| position_of(n, &gi.act_index(c)?))
            .collect::<Result<Vec<_>>>()?;
        let out_pos = position_of(n, &gi.act_index(&base)?)?;
        slots.push(Slot { gather, out_pos });
    }
    debug_assert!(design.elements()[0].is_identity());
    Ok(Plan {
        depth: t.depth(),
        scale: 1.0 / design.len() as f64,
        slots,
    })
}

/// Which MLP calls a batched pass makes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Every design element: the whole output tensor.
    Full,
    /// Only `g = id` per component: exactly the corner entries, the rest zero.
    CornersOnly,
}

/// Values kept from a batched forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    mode: EvalMode,
    batch: usize,
    traces: Vec<MlpTrace>,
    outputs: Vec<DenseTensor>,
}

impl ForwardTrace {
    pub fn outputs(&self) -> &[DenseTensor] {
        &self.outputs
    }

    pub fn into_outputs(self) -> Vec<DenseTensor> {
        self.outputs
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    /// Component-MLP evaluations performed, summed over the batch.
    pub fn mlp_evaluations(&self) -> usize {
        self.traces.iter().map(MlpTrace::rows).sum()
    }

    /// Evaluations per sample.
    pub fn evaluations_per_sample(&self) -> usize {
        self.mlp_evaluations() / self.batch.max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    tableau: BasisTableau,
    mlp: Mlp,
}

impl Component {
    pub fn tableau(&self) -> &BasisTableau {
        &self.tableau
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

#[derive(Clone, Debug)]
pub struct EquivariantReyNet {
    shape: EquivShape,
    reduced: Option<ReducedSpec>,
    components: Vec<Component>,
    plans: Vec<Plan>,
    /// The size whose `|H_D|` normalizes the design sum; `shape.n` unless the
    /// network was transferred.
    scale_n: usize,
}

/// `|H_D| = n!/(n−D)!`.
fn design_size(n: usize, depth: usize) -> f64 {
    (n + 1 - depth..=n).map(|k| k as f64).product()
}

impl EquivariantReyNet {
    /// Width of the input of a component of the given depth.
    pub fn component_input_dim(shape: &EquivShape, reduced: Option<&ReducedSpec>, depth: usize) -> usize {
        let coords = match reduced {
            Some(spec) => spec.coords_for_depth(depth).len(),
            None => shape.n.pow(shape.in_order as u32),
        };
        coords * shape.in_channels
    }

    fn check_shape(shape: &EquivShape, reduced: Option<&ReducedSpec>) -> Result<()> {
        if shape.n == 0 || shape.in_channels == 0 || shape.out_channels == 0 || shape.in_order == 0 {
            return Err(Error::InvalidArgument(format!("degenerate shape {shape:?}")));
        }
        if shape.out_order == 0 || shape.out_order > 3 {
            return Err(Error::InvalidArgument(format!(
                "output order {} is outside 1..=3",
                shape.out_order
            )));
        }
        if shape.n < shape.out_order {
            return Err(Error::InvalidArgument(format!(
                "n = {} is smaller than the output order {}",
                shape.n, shape.out_order
            )));
        }
        if let Some(spec) = reduced {
            if spec.order() != shape.in_order {
                return Err(Error::Shape(format!(
                    "reduced coordinates of order {} for inputs of order {}",
                    spec.order(),
                    shape.in_order
                )));
            }
            if spec.max_index() > shape.n {
                return Err(Error::IndexOutOfRange {
                    index: spec.max_index(),
                    n: shape.n,
                });
            }
            for depth in 1..=shape.out_order {
                if spec.coords_for_depth(depth).is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "components of depth {depth} read no coordinates"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fresh network with hidden widths `hidden` for every component.
    pub fn new<R: RngCore + ?Sized>(
        shape: EquivShape,
        reduced: Option<ReducedSpec>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_shape(&shape, reduced.as_ref())?;
        let mlps = all_basis_tableaux(shape.out_order)
            .iter()
            .map(|t| {
                let mut dims = vec![Self::component_input_dim(&shape, reduced.as_ref(), t.depth())];
                dims.extend_from_slice(hidden);
                dims.push(shape.out_channels);
                Mlp::init(&dims, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_components(shape, reduced, mlps)
    }

    /// Network from given component MLPs, one per basis tableau in canonical
    /// order.
    pub fn from_components(shape: EquivShape, reduced: Option<ReducedSpec>, mlps: Vec<Mlp>) -> Result<Self> {
        Self::check_shape(&shape, reduced.as_ref())?;
        let tableaux = all_basis_tableaux(shape.out_order);
        if mlps.len() != tableaux.len() {
            return Err(Error::SizeMismatch {
                expected: tableaux.len(),
                actual: mlps.len(),
            });
        }
        for (t, mlp) in tableaux.iter().zip(&mlps) {
            let want = Self::component_input_dim(&shape, reduced.as_ref(), t.depth());
            if mlp.input_dim() != want || mlp.output_dim() != shape.out_channels {
                return Err(Error::Shape(format!(
                    "component {:?} needs {} -> {}, got {:?}",
                    t.rows(),
                    want,
                    shape.out_channels,
                    mlp.dims()
                )));
            }
        }
        let plans = tableaux
            .iter()
            .map(|t| build_plan(&shape, reduced.as_ref(), t))
            .collect::<Result<Vec<_>>>()?;
        let components = tableaux
            .into_iter()
            .zip(mlps)
            .map(|(tableau, mlp)| Component { tableau, mlp })
            .collect();
        Ok(EquivariantReyNet {
            scale_n: shape.n,
            shape,
            reduced,
            components,
            plans,
        })
    }

    /// Normalize the design sum of depth `D` by `|H_D|` at `scale_n` rather
    /// than at the network's own `n`.
    pub fn with_scale_n(mut self, scale_n: usize) -> Result<Self> {
        if scale_n < self.shape.out_order {
            return Err(Error::InvalidArgument(format!(
                "scale size {scale_n} is smaller than the output order {}",
                self.shape.out_order
            )));
        }
        for plan in &mut self.plans {
            plan.scale = 1.0 / design_size(scale_n, plan.depth);
        }
        self.scale_n = scale_n;
        Ok(self)
    }

    pub fn scale_n(&self) -> usize {
        self.scale_n
    }

    pub fn shape(&self) -> &EquivShape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }

    pub fn reduced(&self) -> Option<&ReducedSpec> {
        self.reduced.as_ref()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mlps(&self) -> Vec<&Mlp> {
        self.components.iter().map(|c| &c.mlp).collect()
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        self.components.iter_mut().map(|c| &mut c.mlp).collect()
    }

    pub fn num_params(&self) -> usize {
        self.components.iter().map(|c| c.mlp.num_params()).sum()
    }

    /// Calls one forward pass makes: `Σ_D |𝒯_{m,D}|·|H_D|`.
    pub fn evaluations_per_forward(&self) -> usize {
        self.plans.iter().map(|p| p.slots.len()).sum()
    }

    /// How many `(T, g)` pairs write each output position.
    pub fn write_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.shape.n.pow(self.shape.out_order as u32)];
        for plan in &self.plans {
            for slot in &plan.slots {
                counts[slot.out_pos] += 1;
            }
        }
        counts
    }

    fn check_input(&self, x: &DenseTensor) -> Result<()> {
        let s = &self.shape;
        if x.n() != s.n || x.order() != s.in_order || x.channels() != s.in_channels {
            return Err(Error::Shape(format!(
                "model expects (n={}, order={}, channels={}), got (n={}, order={}, channels={})",
                s.n,
                s.in_order,
                s.in_channels,
                x.n(),
                x.order(),
                x.channels()
            )));
        }
        Ok(())
    }

    fn fill_row(&self, row: &mut [f64], x: &DenseTensor, slot: &Slot) {
        let a = self.shape.in_channels;
        let data = x.data();
        for (q, &p) in slot.gather.iter().enumerate() {
            row[q * a..(q + 1) * a].copy_from_slice(&data[p * a..(p + 1) * a]);
        }
    }

    /// The forward sum with each component replaced by `f(component, input)`.
    /// Calls are made in canonical order (depth, tableau, design element).
    pub fn forward_with<F>(&self, x: &DenseTensor, mut f: F) -> Result<DenseTensor>
    where
        F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
    {
        self.check_input(x)?;
        let b = self.shape.out_channels;
        let mut out = DenseTensor::zeros(self.shape.n, self.shape.out_order, b);
        let mut row = Vec::new();
        for (c, plan) in self.plans.iter().enumerate() {
            for slot in &plan.slots {
                row.resize(slot.gather.len() * self.shape.in_channels, 0.0);
                self.fill_row(&mut row, x, slot);
                let v = f(c, &row)?;
                if v.len() != b {
                    return Err(Error::SizeMismatch {
                        expected: b,
                        actual: v.len(),
                    });
                }
                let dst = &mut out.data_mut()[slot.out_pos * b..(slot.out_pos + 1) * b];
                for (d, v) in dst.iter_mut().zip(v) {
                    *d += v * plan.scale;
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        self.forward_with(x, |c, input| self.components[c].mlp.forward(input))
    }

    /// Batched pass: all calls of one component over the whole batch go
    /// through the MLP as one matrix.
    pub fn forward_batch(&self, xs: &[&DenseTensor], mode: EvalMode) -> Result<ForwardTrace> {
        for x in xs {
            self.check_input(x)?;
        }
        let b = self.shape.out_channels;
        let mut outputs = vec![DenseTensor::zeros(self.shape.n, self.shape.out_order, b); xs.len()];
        let mut traces = Vec::with_capacity(self.plans.len());
        for (plan, comp) in self.plans.iter().zip(&self.components) {
            let slots = self.active_slots(plan, mode);
            let width = comp.mlp.input_dim();
            let mut input = Array2::zeros((xs.len() * slots.len(), width));
            for (s, x) in xs.iter().enumerate() {
                for (k, slot) in slots.iter().enumerate() {
                    let mut row = input.row_mut(s * slots.len() + k);
                    self.fill_row(row.as_slice_mut().expect("contiguous row"), x, slot);
                }
            }
            let trace = comp.mlp.forward_batch(input.view())?;
            let y = trace.output();
            for (s, out) in outputs.iter_mut().enumerate() {
                let data = out.data_mut();
                for (k, slot) in slots.iter().enumerate() {
                    let v = y.row(s * slots.len() + k);
                    for (beta, &v) in v.iter().enumerate() {
                        data[slot.out_pos * b + beta] += v * plan.scale;
                    }
                }
            }
            traces.push(trace);
        }
        Ok(ForwardTrace {
            mode,
            batch: xs.len(),
            traces,
            outputs,
        })
    }

    fn active_slots<'a>(&self, plan: &'a Plan, mode: EvalMode) -> &'a [Slot] {
        match mode {
            EvalMode::Full => &plan.slots,
            EvalMode::CornersOnly => &plan.slots[..1],
        }
    }

    /// Parameter gradients of `Σ_s upstream_s · output_s`, one per component.
    pub fn backward_batch(&self, trace: &ForwardTrace, upstream: &[DenseTensor]) -> Result<Vec<MlpGrads>> {
        if upstream.len() != trace.batch {
            return Err(Error::SizeMismatch {
                expected: trace.batch,
                actual: upstream.len(),
            });
        }
        let b = self.shape.out_channels;
        for u in upstream {
            if u.n() != self.shape.n || u.order() != self.shape.out_order || u.channels() != b {
                return Err(Error::Shape("upstream does not match the model output".into()));
            }
        }
        let mut grads = Vec::with_capacity(self.plans.len());
        for ((plan, comp), mt) in self.plans.iter().zip(&self.components).zip(&trace.traces) {
            let slots = self.active_slots(plan, trace.mode);
            let mut up = Array2::zeros((upstream.len() * slots.len(), b));
            for (s, u) in upstream.iter().enumerate() {
                let data = u.data();
                for (k, slot) in slots.iter().enumerate() {
                    for beta in 0..b {
                        up[[s * slots.len() + k, beta]] = data[slot.out_pos * b + beta] * plan.scale;
                    }
                }
            }
            grads.push(comp.mlp.backward_batch(mt, up.view())?.0);
        }
        Ok(grads)
    }

    /// The same component parameters on `[n_new]`; only reduced networks
    /// have inputs whose width does not depend on `n`.
    pub fn transfer_n(&self, n_new: usize) -> Result<Self> {
        if self.reduced.is_none() {
            return Err(Error::InvalidArgument(
                "only reduced networks transfer across n".into(),
            ));
        }
        let shape = EquivShape { n: n_new, ..self.shape };
        // the components learned f_T·|H_D| at the training size; keeping that
        // normalization makes them compute the same f_T at every n
        Self::from_components(
            shape,
            self.reduced.clone(),
            self.components.iter().map(|c| c.mlp.clone()).collect(),
        )?
        .with_scale_n(self.scale_n)
    }

    /// Depth of each component, in canonical order.
    pub fn depths(&self) -> Vec<usize> {
        self.plans.iter().map(|p| p.depth).collect()
    }
}

/// How the invariant network collapses the equivariant output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over each `S_n`-orbit of index tuples; the orbit sum divided by
    /// `n!`, so the scale does not grow factorially with `n`.
    OrbitMean,
    /// Per channel, the largest diagonal and the largest off-diagonal entry.
    MaxDiagOffdiag,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::OrbitMean => "orbit",
            Pooling::MaxDiagOffdiag => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "orbit" | "orbit_sum" | "orbit_mean" => Some(Pooling::OrbitMean),
            "max" | "max_diag_offdiag" => Some(Pooling::MaxDiagOffdiag),
            _ => None,
        }
    }

    pub fn width(self, m: usize, channels: usize) -> usize {
        match self {
            Pooling::OrbitMean => all_basis_tableaux(m).len() * channels,
            Pooling::MaxDiagOffdiag => 2 * channels,
        }
    }
}

/// Orbit row of every output position and the orbit sizes.
#[derive(Clone, Debug)]
struct OrbitIndex {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl OrbitIndex {
    fn new(n: usize, m: usize) -> Self {
        let (tableaux, labels) = orbit_labels(n, m);
        let mut sizes = vec![0; tableaux.len()];
        for &r in &labels {
            sizes[r] += 1;
        }
        OrbitIndex { labels, sizes }
    }
}

#[derive(Clone, Debug)]
pub struct InvariantReyNet {
    body: EquivariantReyNet,
    pooling: Pooling,
    head: Mlp,
    orbits: OrbitIndex,
}

/// Values kept from a batched invariant pass.
#[derive(Clone, Debug)]
pub struct InvariantTrace {
    body: ForwardTrace,
    head: MlpTrace,
    /// For max pooling, the flat body-output index behind each pooled value.
    argmax: Vec<Vec<usize>>,
}

impl InvariantTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.head.output()
    }

    pub fn mlp_evaluations(&self) -> usize {
        self.body.mlp_evaluations()
    }
}

impl InvariantReyNet {
    pub fn new(body: EquivariantReyNet, pooling: Pooling, head: Mlp) -> Result<Self> {
        let s = body.shape();
        if pooling == Pooling::MaxDiagOffdiag && s.out_order != 2 {
            return Err(Error::InvalidArgument(format!(
                "max pooling needs a matrix body, got order {}",
                s.out_order
            )));
        }
        let width = pooling.width(s.out_order, s.out_channels);
        if head.input_dim() != width {
            return Err(Error::Shape(format!(
                "head takes {} inputs, pooling gives {width}",
                head.input_dim()
            )));
        }
        let orbits = OrbitIndex::new(s.n, s.out_order);
        Ok(InvariantReyNet {
            body,
            pooling,
            head,
            orbits,
        })
    }

    pub fn body(&self) -> &EquivariantReyNet {
        &self.body
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn n(&self) -> usize {
        self.body.n()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn mlps(&self) -> Vec<&Mlp> {
        let mut v = self.body.mlps();
        v.push(&self.head);
        v
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        let mut v = self.body.mlps_mut();
        v.push(&mut self.head);
        v
    }

    pub fn num_params(&self) -> usize {
        self.body.num_params() + self.head.num_params()
    }

    /// Pooled features of one body output, with the routing for max pooling.
    pub fn pool(&self, y: &DenseTensor) -> (Vec<f64>, Vec<usize>) {
        let b = y.channels();
        let data = y.data();
        match self.pooling {
            Pooling::OrbitMean => {
                let rows = self.orbits.sizes.len();
                let mut v = vec![0.0; rows * b];
                for (p, &r) in self.orbits.labels.iter().enumerate() {
                    for beta in 0..b {
                        v[r * b + beta] += data[p * b + beta];
                    }
                }
                for (r, &size) in self.orbits.sizes.iter().enumerate() {
                    if size > 0 {
                        for x in &mut v[r * b..(r + 1) * b] {
                            *x /= size as f64;
                        }
                    }
                }
                (v, Vec::new())
            }
            Pooling::MaxDiagOffdiag => {
                let n = y.n();
                let mut v = vec![f64::NEG_INFINITY; 2 * b];
                let mut arg = vec![0; 2 * b];
                for p in 0..n * n {
                    let slot = if p / n == p % n { 0 } else { 1 };
                    for beta in 0..b {
                        let k = 2 * beta + slot;
                        if data[p * b + beta] > v[k] {
                            v[k] = data[p * b + beta];
                            arg[k] = p * b + beta;
                        }
                    }
                }
                // n = 1 has no off-diagonal entries
                for (k, x) in v.iter_mut().enumerate() {
                    if *x == f64::NEG_INFINITY {
                        *x = 0.0;
                        arg[k] = usize::MAX;
                    }
                }
                (v, arg)
            }
        }
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        let (pooled, _) = self.pool(&self.body.forward(x)?);
        self.head.forward(&pooled)
    }

    pub fn forward_batch(&self, xs: &[&DenseTensor]) -> Result<InvariantTrace> {
        let body = self.body.forward_batch(xs, EvalMode::Full)?;
        let width = self.head.input_dim();
        let mut pooled = Array2::zeros((xs.len(), width));
        let mut argmax = Vec::with_capacity(xs.len());
        for (s, y) in body.outputs().iter().enumerate() {
            let (v, arg) = self.pool(y);
            pooled.row_mut(s).assign(&ndarray::ArrayView1::from(&v[..]));
            argmax.push(arg);
        }
        let head = self.head.forward_batch(pooled.view())?;
        Ok(InvariantTrace { body, head, argmax })
    }

    /// Gradients of `Σ_s upstream_s · output_s`: body components, then head.
    pub fn backward_batch(&self, trace: &InvariantTrace, upstream: ArrayView2<'_, f64>) -> Result<Vec<MlpGrads>> {
        let (head_grads, dpooled) = self.head.backward_batch(&trace.head, upstream)?;
        let s = self.body.shape();
        let b = s.out_channels;
        let mut body_up = Vec::with_capacity(dpooled.nrows());
        for (row, arg) in dpooled.rows().into_iter().zip(&trace.argmax) {
            let mut u = DenseTensor::zeros(s.n, s.out_order, b);
            let data = u.data_mut();
            match self.pooling {
                Pooling::OrbitMean => {
                    for (p, &r) in self.orbits.labels.iter().enumerate() {
                        let size = self.orbits.sizes[r] as f64;
                        for beta in 0..b {
                            data[p * b + beta] = row[r * b + beta] / size;
                        }
                    }
                }
                Pooling::MaxDiagOffdiag => {
                    for (k, &idx) in arg.iter().enumerate() {
                        if idx != usize::MAX {
                            data[idx] += row[k];
                        }
                    }
                }
            }
            body_up.push(u);
        }
        let mut grads = self.body.backward_batch(&trace.body, &body_up)?;
        grads.push(head_grads);
        Ok(grads)
    }

    pub fn transfer_n(&self, n_new: usize) -> Result<Self> {
        InvariantReyNet::new(self.body.transfer_n(n_new)?, self.pooling, self.head.clone())
    }
}

/// `fnn_forward`: flatten, apply the MLP, reshape to `(n, order, channels)`.
pub fn fnn_forward(params: &Mlp, x: &DenseTensor, out_order: usize, out_channels: usize) -> Result<DenseTensor> {
    DenseTensor::from_vec(x.n(), out_order, out_channels, params.forward(x.data())?)
}

/// Architecture tag, as written in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "fnn")]
    Fnn,
    #[serde(rename = "reynet")]
    ReyNet,
    #[serde(rename = "red-reynet")]
    RedReyNet,
    #[serde(rename = "inv-reynet")]
    InvReyNet,
    #[serde(rename = "inv-red-reynet")]
    InvRedReyNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Fnn,
        ModelKind::ReyNet,
        ModelKind::RedReyNet,
        ModelKind::InvReyNet,
        ModelKind::InvRedReyNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fnn => "fnn",
            ModelKind::ReyNet => "reynet",
            ModelKind::RedReyNet => "red-reynet",
            ModelKind::InvReyNet => "inv-reynet",
            ModelKind::InvRedReyNet => "inv-red-reynet",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_reduced(self) -> bool {
        matches!(self, ModelKind::RedReyNet | ModelKind::InvRedReyNet)
    }

    pub fn is_invariant(self) -> bool {
        matches!(self, ModelKind::InvReyNet | ModelKind::InvRedReyNet)
    }

    pub fn is_reynet(self) -> bool {
        self != ModelKind::Fnn
    }
}

/// Everything that determines a model's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub in_order: usize,
    pub in_channels: usize,
    /// Output tensor order; `0` for invariant models.
    pub out_order: usize,
    pub out_channels: usize,
    pub hidden: Vec<usize>,
    /// Channels of the equivariant body of an invariant model.
    pub body_channels: usize,
    pub pooling: Option<Pooling>,
    pub reduced: Option<ReducedSpec>,
    /// Size whose design-set sizes normalize the equivariant sum; unset means
    /// `n`. Transfer keeps the training size here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_n: Option<usize>,
}

impl ModelSpec {
    /// Defaults for a kind: 4-corner inputs for reduced kinds, orbit pooling
    /// for the reduced invariant network and max pooling for the full one.
    pub fn new(kind: ModelKind, n: usize, in_order: usize, out_order: usize, hidden: Vec<usize>) -> Self {
        let reduced = kind
            .is_reduced()
            .then(|| ReducedSpec::corners(in_order, 2).expect("valid corners"));
        let pooling = match kind {
            ModelKind::InvReyNet => Some(Pooling::MaxDiagOffdiag),
            ModelKind::InvRedReyNet => Some(Pooling::OrbitMean),
            _ => None,
        };
        ModelSpec {
            kind,
            n,
            in_order,
            in_channels: 1,
            out_order: if kind.is_invariant() { 0 } else { out_order },
            out_channels: 1,
            hidden,
            body_channels: if kind.is_invariant() { 8 } else { 0 },
            pooling,
            reduced,
            scale_n: None,
        }
    }

    fn equiv_shape(&self) -> EquivShape {
        if self.kind.is_invariant() {
            EquivShape {
                n: self.n,
                in_order: self.in_order,
                in_channels: self.in_channels,
                out_order: self.in_order,
                out_channels: self.body_channels,
            }
        } else {
            EquivShape {
                n: self.n,
                in_order: self.in_order,
                in_channels: self.in_channels,
                out_order: self.out_order,
                out_channels: self.out_channels,
            }
        }
    }

    pub fn scale_n(&self) -> usize {
        self.scale_n.unwrap_or(self.n)
    }

    fn validate(&self) -> Result<()> {
        if self.scale_n.is_some() && !self.kind.is_reduced() {
            return Err(Error::InvalidArgument(format!(
                "{} has no transferable normalization",
                self.kind.name()
            )));
        }
        if self.kind.is_reduced() != self.reduced.is_some() {
            return Err(Error::InvalidArgument(format!(
                "kind {} {} a reduced spec",
                self.kind.name(),
                if self.kind.is_reduced() { "needs" } else { "takes no" }
            )));
        }
        if self.kind.is_invariant() != self.pooling.is_some() {
            return Err(Error::InvalidArgument(format!(
                "pooling is set exactly for invariant kinds, not {}",
                self.kind.name()
            )));
        }
        if self.kind.is_invariant() && (self.out_order != 0 || self.body_channels == 0) {
            return Err(Error::InvalidArgument(
                "invariant models have order-0 outputs and a non-empty body".into(),
            ));
        }
        Ok(())
    }
}

/// The layer widths `[input, hidden..., output]`.
fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[derive(Clone, Debug)]
pub enum Network {
    Fnn(Mlp),
    Equivariant(EquivariantReyNet),
    Invariant(InvariantReyNet),
}

/// A model together with the spec that built it.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    net: Network,
}

/// Values kept from a batched pass over any model.
#[derive(Clone, Debug)]
pub enum ModelTrace {
    Fnn(MlpTrace, Vec<DenseTensor>),
    Equivariant(ForwardTrace),
    Invariant(InvariantTrace, Vec<DenseTensor>),
}

impl ModelTrace {
    pub fn outputs(&self) -> &[DenseTensor] {
        match self {
            ModelTrace::Fnn(_, out) | ModelTrace::Invariant(_, out) => out,
            ModelTrace::Equivariant(t) => t.outputs(),
        }
    }
}

impl Model {
    /// Fresh model; parameters are drawn from the init stream of `seed`,
    /// component by component in canonical order, head last.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, streams::INIT);
        Self::build_with(spec, &mut r)
    }

    pub fn build_with<R: RngCore + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let net = match spec.kind {
            ModelKind::Fnn => {
                let out = spec.n.pow(spec.out_order as u32) * spec.out_channels;
                let input = spec.n.pow(spec.in_order as u32) * spec.in_channels;
                Network::Fnn(Mlp::init(&dims(input, &spec.hidden, out), rng)?)
            }
            ModelKind::ReyNet | ModelKind::RedReyNet => Network::Equivariant(
                EquivariantReyNet::new(spec.equiv_shape(), spec.reduced.clone(), &spec.hidden, rng)?
                    .with_scale_n(spec.scale_n())?,
            ),
            ModelKind::InvReyNet | ModelKind::InvRedReyNet => {
                let shape = spec.equiv_shape();
                let body = EquivariantReyNet::new(shape, spec.reduced.clone(), &spec.hidden, rng)?
                    .with_scale_n(spec.scale_n())?;
                let pooling = spec.pooling.expect("validated");
                let width = pooling.width(shape.out_order, shape.out_channels);
                let head = Mlp::init(&dims(width, &spec.hidden, spec.out_channels), rng)?;
                Network::Invariant(InvariantReyNet::new(body, pooling, head)?)
            }
        };
        Ok(Model { spec, net })
    }

    /// Model with the given MLPs in [`Model::mlps`] order.
    pub fn from_mlps(spec: ModelSpec, mut mlps: Vec<Mlp>) -> Result<Self> {
        spec.validate()?;
        let net = match spec.kind {
            ModelKind::Fnn => {
                if mlps.len() != 1 {
                    return Err(Error::SizeMismatch {
                        expected: 1,
                        actual: mlps.len(),
                    });
                }
                let mlp = mlps.pop().expect("one MLP");
                let input = spec.n.pow(spec.in_order as u32) * spec.in_channels;
                let out = spec.n.pow(spec.out_order as u32) * spec.out_channels;
                if mlp.input_dim() != input || mlp.output_dim() != out {
                    return Err(Error::Shape(format!(
                        "fnn needs {input} -> {out}, got {:?}",
                        mlp.dims()
                    )));
                }
                Network::Fnn(mlp)
            }
            ModelKind::ReyNet | ModelKind::RedReyNet => Network::Equivariant(
                EquivariantReyNet::from_components(spec.equiv_shape(), spec.reduced.clone(), mlps)?
                    .with_scale_n(spec.scale_n())?,
            ),
            ModelKind::InvReyNet | ModelKind::InvRedReyNet => {
                let head = mlps
                    .pop()
                    .ok_or_else(|| Error::Checkpoint("missing head".into()))?;
                let body = EquivariantReyNet::from_components(spec.equiv_shape(), spec.reduced.clone(), mlps)?
                    .with_scale_n(spec.scale_n())?;
                Network::Invariant(InvariantReyNet::new(
                    body,
                    spec.pooling.expect("validated"),
                    head,
                )?)
            }
        };
        Ok(Model { spec, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn mlps(&self) -> Vec<&Mlp> {
        match &self.net {
            Network::Fnn(m) => vec![m],
            Network::Equivariant(e) => e.mlps(),
            Network::Invariant(i) => i.mlps(),
        }
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        match &mut self.net {
            Network::Fnn(m) => vec![m],
            Network::Equivariant(e) => e.mlps_mut(),
            Network::Invariant(i) => i.mlps_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.mlps().iter().map(|m| m.num_params()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.mlps().iter().flat_map(|m| m.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::SizeMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut k = 0;
        for m in self.mlps_mut() {
            let len = m.num_params();
            m.set_flat_params(&flat[k..k + len])?;
            k += len;
        }
        Ok(())
    }

    /// Shape of one output: `(order, channels)`.
    pub fn output_shape(&self) -> (usize, usize) {
        (self.spec.out_order, self.spec.out_channels)
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let (order, b) = self.output_shape();
        match &self.net {
            Network::Fnn(m) => {
                if x.data().len() != m.input_dim() || x.n() != self.spec.n {
                    return Err(Error::Shape(format!(
                        "fnn for n={} cannot take a tensor with n={}",
                        self.spec.n,
                        x.n()
                    )));
                }
                fnn_forward(m, x, order, b)
            }
            Network::Equivariant(e) => e.forward(x),
            Network::Invariant(i) => DenseTensor::from_vec(x.n(), 0, b, i.forward(x)?),
        }
    }

    pub fn forward_batch(&self, xs: &[&DenseTensor], mode: EvalMode) -> Result<ModelTrace> {
        let (order, b) = self.output_shape();
        match &self.net {
            Network::Fnn(m) => {
                let width = m.input_dim();
                let mut input = Array2::zeros((xs.len(), width));
                for (s, x) in xs.iter().enumerate() {
                    if x.data().len() != width || x.n() != self.spec.n {
                        return Err(Error::Shape(format!(
                            "fnn for n={} cannot take a tensor with n={}",
                            self.spec.n,
                            x.n()
                        )));
                    }
                    input.row_mut(s).assign(&ndarray::ArrayView1::from(x.data()));
                }
                let trace = m.forward_batch(input.view())?;
                let outs = rows_to_tensors(trace.output(), self.spec.n, order, b)?;
                Ok(ModelTrace::Fnn(trace, outs))
            }
            Network::Equivariant(e) => Ok(ModelTrace::Equivariant(e.forward_batch(xs, mode)?)),
            Network::Invariant(i) => {
                let trace = i.forward_batch(xs)?;
                let outs = rows_to_tensors(trace.output(), self.spec.n, 0, b)?;
                Ok(ModelTrace::Invariant(trace, outs))
            }
        }
    }

    /// Gradients of `Σ_s upstream_s · output_s`, one per MLP in
    /// [`Model::mlps`] order.
    pub fn backward_batch(&self, trace: &ModelTrace, upstream: &[DenseTensor]) -> Result<Vec<MlpGrads>> {
        let stack = |width: usize| -> Result<Array2<f64>> {
            let mut up = Array2::zeros((upstream.len(), width));
            for (s, u) in upstream.iter().enumerate() {
                if u.data().len() != width {
                    return Err(Error::SizeMismatch {
                        expected: width,
                        actual: u.data().len(),
                    });
                }
                up.row_mut(s).assign(&ndarray::ArrayView1::from(u.data()));
            }
            Ok(up)
        };
        match (&self.net, trace) {
            (Network::Fnn(m), ModelTrace::Fnn(t, _)) => {
                let up = stack(m.output_dim())?;
                Ok(vec![m.backward_batch(t, up.view())?.0])
            }
            (Network::Equivariant(e), ModelTrace::Equivariant(t)) => e.backward_batch(t, upstream),
            (Network::Invariant(i), ModelTrace::Invariant(t, _)) => {
                let up = stack(i.output_dim())?;
                i.backward_batch(t, up.view())
            }
            _ => Err(Error::InvalidArgument("trace from a different model".into())),
        }
    }

    /// Reduced models only: the same parameters on `[n_new]`.
    pub fn transfer_n(&self, n_new: usize) -> Result<Self> {
        let net = match &self.net {
            Network::Equivariant(e) if self.spec.kind.is_reduced() => Network::Equivariant(e.transfer_n(n_new)?),
            Network::Invariant(i) if self.spec.kind.is_reduced() => Network::Invariant(i.transfer_n(n_new)?),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} is not reduced and cannot change n",
                    self.spec.kind.name()
                )))
            }
        };
        Ok(Model {
            spec: ModelSpec {
                n: n_new,
                scale_n: Some(self.spec.scale_n()),
                ..self.spec.clone()
            },
            net,
        })
    }
}

fn rows_to_tensors(y: &Array2<f64>, n: usize, order: usize, b: usize) -> Result<Vec<DenseTensor>> {
    y.rows()
        .into_iter()
        .map(|r| DenseTensor::from_vec(n, order, b, r.to_vec()))
        .collect()
}

/// Positions of `[n]^order` in flat order, as tuples. Shared by tests and the
/// verification suites.
pub fn all_positions(n: usize, order: usize) -> Vec<Vec<usize>> {
    (0..n.pow(order as u32)).map(|p| tuple_at(n, order, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{act_tensor, enumerate_symmetric};
    use crate::nn::init_params;
    use crate::reynolds::{tau_design, ScatteredComponent, TensorShape};
    use crate::rng::uniform;

    fn random_tensor(n: usize, order: usize, a: usize, seed: u64) -> DenseTensor {
        let mut r = rng::stream(seed, 11);
        DenseTensor::from_fn(n, order, a, |_, _| uniform(&mut r, -1.0, 1.0))
    }

    fn shape(n: usize, l: usize, m: usize, b: usize) -> EquivShape {
        EquivShape {
            n,
            in_order: l,
            in_channels: 1,
            out_order: m,
            out_channels: b,
        }
    }

    fn net(n: usize, m: usize, reduced: Option<ReducedSpec>, hidden: &[usize], seed: u64) -> EquivariantReyNet {
        EquivariantReyNet::new(shape(n, 2, m, 1), reduced, hidden, &mut rng::stream(seed, streams::INIT)).unwrap()
    }

    fn constant(input: usize, c: f64) -> Mlp {
        Mlp::new(
            vec![Array2::zeros((1, input))],
            vec![ndarray::array![c]],
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_constant_components() {
        let (c1, c2) = (3.0, -5.0);
        let model =
            EquivariantReyNet::from_components(shape(2, 2, 2, 1), None, vec![constant(4, c1), constant(4, c2)]).unwrap();
        let y = model.forward(&random_tensor(2, 2, 1, 1)).unwrap();
        assert_eq!(y.data(), &[c1 / 2.0, c2 / 2.0, c2 / 2.0, c1 / 2.0]);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let s = shape(4, 2, 2, 2);
        let mlps = all_basis_tableaux(2)
            .iter()
            .map(|t| Mlp::zeros(&[EquivariantReyNet::component_input_dim(&s, None, t.depth()), 5, 2]).unwrap())
            .collect();
        let model = EquivariantReyNet::from_components(s, None, mlps).unwrap();
        assert!(model.forward(&random_tensor(4, 2, 1, 2)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn evaluation_count_is_n_squared() {
        for n in [3, 5, 10, 20] {
            let model = net(n, 2, Some(ReducedSpec::four_corner()), &[4], 1);
            let x = random_tensor(n, 2, 1, 3);
            let mut calls = 0;
            model
                .forward_with(&x, |c, input| {
                    calls += 1;
                    model.components()[c].mlp().forward(input)
                })
                .unwrap();
            assert_eq!(calls, n * n);
            let trace = model.forward_batch(&[&x, &x], EvalMode::Full).unwrap();
            assert_eq!(trace.evaluations_per_sample(), n * n);
            assert_eq!(model.evaluations_per_forward(), n * n);
        }
    }

    #[test]
    fn every_output_entry_written_once() {
        for n in 1..=5 {
            for m in 1..=3.min(n) {
                let s = EquivShape {
                    n,
                    in_order: 1,
                    in_channels: 1,
                    out_order: m,
                    out_channels: 1,
                };
                let model = EquivariantReyNet::new(s, None, &[2], &mut rng::stream(0, 0)).unwrap();
                assert!(model.write_counts().iter().all(|&c| c == 1), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn batch_and_single_paths_agree() {
        let model = net(4, 2, Some(ReducedSpec::four_corner()), &[8, 8], 5);
        let xs: Vec<DenseTensor> = (0..3).map(|s| random_tensor(4, 2, 1, 10 + s)).collect();
        let refs: Vec<&DenseTensor> = xs.iter().collect();
        let trace = model.forward_batch(&refs, EvalMode::Full).unwrap();
        for (x, y) in xs.iter().zip(trace.outputs()) {
            assert!(model.forward(x).unwrap().max_abs_diff(y).unwrap() < 1e-12);
        }
        let corners = model.forward_batch(&refs, EvalMode::CornersOnly).unwrap();
        assert_eq!(corners.evaluations_per_sample(), 2);
        let pos = crate::tensor::corner_positions(4, 2).unwrap();
        for (full, c) in trace.outputs().iter().zip(corners.outputs()) {
            for p in 0..16 {
                let want = if pos.contains(&p) { full.data()[p] } else { 0.0 };
                assert_eq!(c.data()[p], want);
            }
        }
    }

    #[test]
    fn stab_restricted_network_is_exactly_equivariant() {
        for n in 2..=5 {
            for (l, m) in [(2, 2), (1, 1), (1, 2), (2, 1)] {
                let s = EquivShape {
                    n,
                    in_order: l,
                    in_channels: 2,
                    out_order: m,
                    out_channels: 2,
                };
                let spec = ReducedSpec::stab_restricted(l, m).unwrap();
                let model = EquivariantReyNet::new(s, Some(spec), &[8], &mut rng::stream(n as u64, 1)).unwrap();
                let x = random_tensor(n, l, 2, 40 + n as u64);
                let y = model.forward(&x).unwrap();
                for g in enumerate_symmetric(n).unwrap() {
                    let lhs = model.forward(&act_tensor(&g, &x).unwrap()).unwrap();
                    let rhs = act_tensor(&g, &y).unwrap();
                    assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn unrestricted_network_has_measurable_gap() {
        let model = net(4, 2, Some(ReducedSpec::four_corner()), &[8], 3);
        let x = random_tensor(4, 2, 1, 1);
        let y = model.forward(&x).unwrap();
        let gap = enumerate_symmetric(4)
            .unwrap()
            .iter()
            .map(|g| {
                let lhs = model.forward(&act_tensor(g, &x).unwrap()).unwrap();
                lhs.max_abs_diff(&act_tensor(g, &y).unwrap()).unwrap()
            })
            .fold(0.0, f64::max);
        assert!(gap.is_finite());
    }

    #[test]
    fn reconstruction_from_components() {
        // F = Σ_D Σ_T τ_{H_D}(|H_D| f_T ⊗ e_{u_T}) for Stab([D])-invariant f_T,
        // reproduced by the network with 𝒩_T := |H_D| f_T
        for n in 2..=4 {
            let spec = ReducedSpec::stab_restricted(2, 2).unwrap();
            let model = EquivariantReyNet::new(shape(n, 2, 2, 1), Some(spec.clone()), &[6], &mut rng::stream(7, 1)).unwrap();
            let x = random_tensor(n, 2, 1, 70 + n as u64);
            let mut target = DenseTensor::zeros(n, 2, 1);
            let mut sizes = Vec::new();
            for comp in model.components() {
                let t = comp.tableau();
                let h = enumerate_design(n, t.depth()).unwrap();
                let size = h.len() as f64;
                sizes.push(size);
                let coords: Vec<Vec<usize>> =
                    spec.coords_for_depth(t.depth()).into_iter().map(<[usize]>::to_vec).collect();
                let f = ScatteredComponent::new(TensorShape::new(n, 2, 1), 2, 1, &t.base_tuple(), |y: &DenseTensor| {
                    let v: Vec<f64> = coords.iter().map(|c| y.get(c, 1).unwrap()).collect();
                    comp.mlp().forward(&v).unwrap().into_iter().map(|o| o * size).collect()
                })
                .unwrap();
                target = target.add(&tau_design(&f, &x, &h).unwrap()).unwrap();
            }
            let out = model
                .forward_with(&x, |c, input| {
                    Ok(model.components()[c].mlp().forward(input)?.into_iter().map(|v| v * sizes[c]).collect())
                })
                .unwrap();
            assert!(out.max_abs_diff(&target).unwrap() <= 1e-12, "n={n}");
        }
    }

    #[test]
    fn reduced_gather_matches_materialized_action() {
        let spec = ReducedSpec::corners(2, 3).unwrap();
        let mut r = rng::stream(5, 5);
        for trial in 0..1000 {
            let g = Permutation::random(6, &mut r);
            let x = random_tensor(6, 2, 2, trial);
            let gx = act_tensor(&g, &x).unwrap();
            let want: Vec<f64> = spec.coords().iter().flat_map(|c| gx.slice_at(c).unwrap().to_vec()).collect();
            assert_eq!(reduced_gather(&x, &g, &spec).unwrap(), want);
        }
        let x = random_tensor(2, 2, 1, 1);
        let id = Permutation::identity(2);
        assert_eq!(reduced_gather(&x, &id, &ReducedSpec::four_corner()).unwrap(), x.data());
        let far = ReducedSpec::new(vec![vec![1, 3]], false).unwrap();
        assert!(reduced_gather(&x, &id, &far).is_err());
    }

    fn fd_model(model: &Model, xs: &[DenseTensor], ups: &[DenseTensor]) -> f64 {
        let refs: Vec<&DenseTensor> = xs.iter().collect();
        let objective = |m: &Model| -> f64 {
            xs.iter()
                .zip(ups)
                .map(|(x, u)| m.forward(x).unwrap().data().iter().zip(u.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let trace = model.forward_batch(&refs, EvalMode::Full).unwrap();
        let analytic: Vec<f64> = model
            .backward_batch(&trace, ups)
            .unwrap()
            .iter()
            .flat_map(MlpGrads::flat)
            .collect();
        let base = model.flat_params();
        let mut probe = model.clone();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = objective(&probe);
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let fd = (up - objective(&probe)) / (2.0 * h);
            worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3));
        }
        worst
    }

    fn upstreams(model: &Model, count: usize, seed: u64) -> Vec<DenseTensor> {
        let (order, b) = model.output_shape();
        (0..count).map(|s| random_tensor(model.n(), order, b, seed + s as u64)).collect()
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        for kind in ModelKind::ALL {
            let mut spec = ModelSpec::new(kind, 3, 2, 2, vec![8]);
            if kind.is_invariant() {
                spec.body_channels = 2;
            }
            let model = Model::build(spec, 4).unwrap();
            let xs: Vec<DenseTensor> = (0..2).map(|s| random_tensor(3, 2, 1, 90 + s)).collect();
            let ups = upstreams(&model, 2, 50);
            let err = fd_model(&model, &xs, &ups);
            assert!(err <= 1e-6, "{}: {err}", kind.name());
        }
        let mut spec = ModelSpec::new(ModelKind::InvRedReyNet, 3, 2, 0, vec![8]);
        spec.pooling = Some(Pooling::MaxDiagOffdiag);
        let model = Model::build(spec, 4).unwrap();
        let xs: Vec<DenseTensor> = (0..2).map(|s| random_tensor(3, 2, 1, 20 + s)).collect();
        let ups = upstreams(&model, 2, 5);
        assert!(fd_model(&model, &xs, &ups) <= 1e-6);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = Model::build(ModelSpec::new(ModelKind::RedReyNet, 3, 2, 2, vec![8]), 1).unwrap();
        let x = random_tensor(3, 2, 1, 1);
        let trace = model.forward_batch(&[&x], EvalMode::Full).unwrap();
        let grads = model.backward_batch(&trace, &[DenseTensor::zeros(3, 2, 1)]).unwrap();
        assert!(grads.iter().all(MlpGrads::is_zero));
    }

    #[test]
    fn corner_loss_gradients_touch_only_identity_calls() {
        // a corner-only upstream reaches exactly the g = id rows
        let model = net(4, 2, Some(ReducedSpec::four_corner()), &[8], 2);
        let x = random_tensor(4, 2, 1, 8);
        let full = model.forward_batch(&[&x], EvalMode::Full).unwrap();
        let (pred, target) = (full.outputs()[0].clone(), DenseTensor::zeros(4, 2, 1));
        let (_, grad) = crate::nn::loss(crate::nn::LossKind::CornerMse, &pred, &target).unwrap();
        let corners = crate::tensor::corner_positions(4, 2).unwrap();
        for (p, &v) in grad.data().iter().enumerate() {
            assert!(corners.contains(&p) || v == 0.0);
        }
        let g_full = model.backward_batch(&full, std::slice::from_ref(&grad)).unwrap();
        let cheap = model.forward_batch(&[&x], EvalMode::CornersOnly).unwrap();
        let g_cheap = model.backward_batch(&cheap, &[grad]).unwrap();
        for (a, b) in g_full.iter().zip(&g_cheap) {
            for (u, v) in a.flat().iter().zip(b.flat()) {
                assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
        // each plan hits the corner only through its first slot
        for plan in &model.plans {
            for (k, slot) in plan.slots.iter().enumerate() {
                assert_eq!(corners.contains(&slot.out_pos), k == 0);
            }
        }
    }

    #[test]
    fn transfer_keeps_parameters() {
        let model = Model::build(ModelSpec::new(ModelKind::RedReyNet, 3, 2, 2, vec![16, 16]), 9).unwrap();
        let x = random_tensor(3, 2, 1, 4);
        let same = model.transfer_n(3).unwrap();
        assert_eq!(same.forward(&x).unwrap(), model.forward(&x).unwrap());
        for n in 3..=20 {
            let t = model.transfer_n(n).unwrap();
            assert_eq!(t.num_params(), model.num_params());
            assert_eq!(t.flat_params(), model.flat_params());
        }
        let big = model.transfer_n(20).unwrap();
        let y = big.forward(&random_tensor(20, 2, 1, 5)).unwrap();
        assert_eq!(y.n(), 20);
        assert!(model.transfer_n(1).is_err());
        let full = Model::build(ModelSpec::new(ModelKind::ReyNet, 3, 2, 2, vec![4]), 0).unwrap();
        assert!(full.transfer_n(4).is_err());
        let inv = Model::build(ModelSpec::new(ModelKind::InvRedReyNet, 3, 2, 0, vec![4]), 0).unwrap();
        assert_eq!(inv.transfer_n(7).unwrap().num_params(), inv.num_params());
    }

    #[test]
    fn transferred_components_compute_what_they_learned() {
        // an off-diagonal output reads only X_ii, X_ij, X_ji, X_jj, so it must
        // match the small model on a matrix with those entries in its corner
        let small = Model::build(ModelSpec::new(ModelKind::RedReyNet, 3, 2, 2, vec![16]), 2).unwrap();
        let big = small.transfer_n(20).unwrap();
        let x = random_tensor(20, 2, 1, 6);
        let y = big.forward(&x).unwrap();
        for (i, j) in [(1, 2), (7, 3), (20, 19), (5, 14)] {
            let corner = [[x.get(&[i, i], 1).unwrap(), x.get(&[i, j], 1).unwrap()], [x.get(&[j, i], 1).unwrap(), x.get(&[j, j], 1).unwrap()]];
            let z = DenseTensor::from_fn(3, 2, 1, |u, _| if u[0] <= 2 && u[1] <= 2 { corner[u[0] - 1][u[1] - 1] } else { 0.5 });
            let want = small.forward(&z).unwrap().get(&[1, 2], 1).unwrap();
            assert!((y.get(&[i, j], 1).unwrap() - want).abs() < 1e-12, "({i},{j})");
        }
        // the normalization survives a rebuild from the spec, as in checkpoints
        let mut again = Model::build(big.spec().clone(), 0).unwrap();
        again.set_flat_params(&big.flat_params()).unwrap();
        assert_eq!(again.forward(&x).unwrap(), y);
        assert_eq!(big.spec().scale_n(), 3);
        assert_eq!(big.transfer_n(5).unwrap().spec().scale_n(), 3);
    }

    fn restricted_invariant(n: usize, pooling: Pooling, seed: u64) -> InvariantReyNet {
        let s = shape(n, 2, 2, 3);
        let body = EquivariantReyNet::new(
            s,
            Some(ReducedSpec::stab_restricted(2, 2).unwrap()),
            &[8],
            &mut rng::stream(seed, 1),
        )
        .unwrap();
        let head = init_params(seed, &[pooling.width(2, 3), 8, 2]).unwrap();
        InvariantReyNet::new(body, pooling, head).unwrap()
    }

    #[test]
    fn invariant_network_is_invariant() {
        for n in 2..=4 {
            for pooling in [Pooling::OrbitMean, Pooling::MaxDiagOffdiag] {
                let model = restricted_invariant(n, pooling, n as u64);
                let x = random_tensor(n, 2, 1, 3);
                let base = model.forward(&x).unwrap();
                for g in enumerate_symmetric(n).unwrap() {
                    let y = model.forward(&act_tensor(&g, &x).unwrap()).unwrap();
                    for (a, b) in y.iter().zip(&base) {
                        assert!((a - b).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn max_pooling_of_identity_pattern() {
        let model = restricted_invariant(3, Pooling::MaxDiagOffdiag, 1);
        let y = DenseTensor::from_fn(3, 2, 3, |u, _| if u[0] == u[1] { 1.0 } else { 0.0 });
        let (v, _) = model.pool(&y);
        assert_eq!(v, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let head = Mlp::zeros(&[6, 4, 2]).unwrap();
        let zero = InvariantReyNet::new(model.body().clone(), Pooling::MaxDiagOffdiag, head).unwrap();
        assert_eq!(zero.forward(&random_tensor(3, 2, 1, 0)).unwrap(), vec![0.0, 0.0]);
        let s1 = shape(3, 2, 1, 1);
        let body = EquivariantReyNet::new(s1, None, &[2], &mut rng::stream(0, 0)).unwrap();
        assert!(InvariantReyNet::new(body, Pooling::MaxDiagOffdiag, Mlp::zeros(&[2, 1]).unwrap()).is_err());
    }

    #[test]
    fn orbit_pooling_is_orbit_mean() {
        let model = restricted_invariant(4, Pooling::OrbitMean, 2);
        let y = random_tensor(4, 2, 3, 6);
        let expect = crate::tensor::orbit_mean(&y);
        assert_eq!(model.pool(&y).0, expect.values());
    }

    #[test]
    fn fnn_baseline() {
        let zero = Mlp::zeros(&[9, 4, 9]).unwrap();
        let x = random_tensor(3, 2, 1, 1);
        assert!(fnn_forward(&zero, &x, 2, 1).unwrap().data().iter().all(|&v| v == 0.0));
        let model = Model::build(ModelSpec::new(ModelKind::Fnn, 3, 2, 2, vec![16]), 3).unwrap();
        let mlp = model.mlps()[0].clone();
        assert_eq!(model.forward(&x).unwrap().data(), &mlp.forward(x.data()).unwrap()[..]);
        // a generic FNN is not equivariant: record a positive gap
        let y = model.forward(&x).unwrap();
        let gap = enumerate_symmetric(3)
            .unwrap()
            .iter()
            .map(|g| {
                let lhs = model.forward(&act_tensor(g, &x).unwrap()).unwrap();
                lhs.max_abs_diff(&act_tensor(g, &y).unwrap()).unwrap()
            })
            .fold(0.0, f64::max);
        assert!(gap > 0.0);
        assert!(model.forward(&random_tensor(4, 2, 1, 1)).is_err());
    }

    #[test]
    fn diagonal_model_has_one_component() {
        let model = Model::build(ModelSpec::new(ModelKind::RedReyNet, 5, 2, 1, vec![8]), 0).unwrap();
        assert_eq!(model.mlps().len(), 1);
        let y = model.forward(&random_tensor(5, 2, 1, 0)).unwrap();
        assert_eq!((y.order(), y.data().len()), (1, 5));
        assert_eq!(all_positions(3, 2).len(), 9);
    }

    #[test]
    fn spec_validation() {
        let mut spec = ModelSpec::new(ModelKind::ReyNet, 3, 2, 2, vec![4]);
        spec.reduced = Some(ReducedSpec::four_corner());
        assert!(Model::build(spec, 0).is_err());
        assert!(Model::build(ModelSpec::new(ModelKind::RedReyNet, 1, 2, 2, vec![4]), 0).is_err());
        assert!(ReducedSpec::new(vec![vec![1, 1], vec![1, 1]], false).is_err());
        assert!(ReducedSpec::new(vec![], false).is_err());
        assert_eq!(ReducedSpec::stab_restricted(2, 2).unwrap().coords_for_depth(1), vec![&[1usize, 1][..]]);
    }
}
