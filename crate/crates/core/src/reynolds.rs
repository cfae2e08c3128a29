//! Reynolds operators over the full symmetric group and over design subsets.
//!
//! `τ_H(f)(x) = (1/|H|) Σ_{g∈H} g^{-1}·f(g·x)` and
//! `γ_H(f)(x) = (1/|H|) Σ_{g∈H} f(g·x)`. The full-group versions enumerate all
//! of `S_n` and are refused above [`BRUTE_FORCE_LIMIT`]; they exist to check the
//! design-restricted sums that the models actually use.

use crate::group::{
    act_tensor, enumerate_design, enumerate_symmetric, DesignHD, Permutation, BRUTE_FORCE_LIMIT,
};
use crate::nn::Mlp;
use crate::rng::{self, uniform};
use crate::tensor::{position_of, DenseTensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorShape {
    pub n: usize,
    pub order: usize,
    pub channels: usize,
}

impl TensorShape {
    pub fn new(n: usize, order: usize, channels: usize) -> Self {
        TensorShape { n, order, channels }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.order as u32) * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, x: &DenseTensor) -> bool {
        x.n() == self.n && x.order() == self.order && x.channels() == self.channels
    }
}

/// A deterministic map between tensor spaces.
pub trait VectorFunction {
    fn input_shape(&self) -> TensorShape;
    fn output_shape(&self) -> TensorShape;
    fn eval(&self, x: &DenseTensor) -> Result<DenseTensor>;
}

/// A closure with declared shapes.
pub struct FnMap<F> {
    input: TensorShape,
    output: TensorShape,
    f: F,
}

impl<F: Fn(&DenseTensor) -> Result<DenseTensor>> FnMap<F> {
    pub fn new(input: TensorShape, output: TensorShape, f: F) -> Self {
        FnMap { input, output, f }
    }
}

impl<F: Fn(&DenseTensor) -> Result<DenseTensor>> VectorFunction for FnMap<F> {
    fn input_shape(&self) -> TensorShape {
        self.input
    }

    fn output_shape(&self) -> TensorShape {
        self.output
    }

    fn eval(&self, x: &DenseTensor) -> Result<DenseTensor> {
        (self.f)(x)
    }
}

/// Flatten, apply an MLP, reshape. Generic (non-equivariant) test functions.
pub struct MlpMap {
    mlp: Mlp,
    input: TensorShape,
    output: TensorShape,
}

impl MlpMap {
    pub fn new(mlp: Mlp, input: TensorShape, output: TensorShape) -> Result<Self> {
        if mlp.input_dim() != input.len() || mlp.output_dim() != output.len() {
            return Err(Error::Shape(format!(
                "MLP {:?} cannot map {} values to {}",
                mlp.dims(),
                input.len(),
                output.len()
            )));
        }
        Ok(MlpMap { mlp, input, output })
    }
}

impl VectorFunction for MlpMap {
    fn input_shape(&self) -> TensorShape {
        self.input
    }

    fn output_shape(&self) -> TensorShape {
        self.output
    }

    fn eval(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let y = self.mlp.forward(x.data())?;
        DenseTensor::from_vec(self.output.n, self.output.order, self.output.channels, y)
    }
}

/// `f_T ∘ ê_T`: a vector-valued component placed at one fixed index tuple of an
/// otherwise zero output tensor.
pub struct ScatteredComponent<F> {
    input: TensorShape,
    output: TensorShape,
    target: usize,
    f: F,
}

impl<F: Fn(&DenseTensor) -> Vec<f64>> ScatteredComponent<F> {
    pub fn new(input: TensorShape, out_order: usize, channels: usize, target: &[usize], f: F) -> Result<Self> {
        if target.len() != out_order {
            return Err(Error::SizeMismatch {
                expected: out_order,
                actual: target.len(),
            });
        }
        Ok(ScatteredComponent {
            input,
            output: TensorShape::new(input.n, out_order, channels),
            target: position_of(input.n, target)?,
            f,
        })
    }
}

impl<F: Fn(&DenseTensor) -> Vec<f64>> VectorFunction for ScatteredComponent<F> {
    fn input_shape(&self) -> TensorShape {
        self.input
    }

    fn output_shape(&self) -> TensorShape {
        self.output
    }

    fn eval(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let v = (self.f)(x);
        let b = self.output.channels;
        if v.len() != b {
            return Err(Error::SizeMismatch {
                expected: b,
                actual: v.len(),
            });
        }
        let mut out = DenseTensor::zeros(self.output.n, self.output.order, b);
        out.data_mut()[self.target * b..(self.target + 1) * b].copy_from_slice(&v);
        Ok(out)
    }
}

fn check_input(f: &dyn VectorFunction, x: &DenseTensor) -> Result<()> {
    if f.input_shape().matches(x) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "function expects {:?}, got tensor (n={}, order={}, channels={})",
            f.input_shape(),
            x.n(),
            x.order(),
            x.channels()
        )))
    }
}

fn check_group(perms: &[Permutation], n: usize) -> Result<()> {
    if perms.is_empty() {
        return Err(Error::InvalidArgument("empty group subset".into()));
    }
    if let Some(g) = perms.iter().find(|g| g.n() != n) {
        return Err(Error::Shape(format!("{g:?} does not act on [{n}]")));
    }
    Ok(())
}

/// `τ_H` for an arbitrary subset `H`, summed in the order given.
pub fn tau_over(f: &dyn VectorFunction, x: &DenseTensor, perms: &[Permutation]) -> Result<DenseTensor> {
    check_input(f, x)?;
    check_group(perms, x.n())?;
    let out = f.output_shape();
    if out.n != x.n() {
        return Err(Error::Shape(format!(
            "equivariant averaging needs matching n (input {}, output {})",
            x.n(),
            out.n
        )));
    }
    let mut acc = DenseTensor::zeros(out.n, out.order, out.channels);
    for g in perms {
        let y = f.eval(&act_tensor(g, x)?)?;
        let back = act_tensor(&g.inverse(), &y)?;
        for (a, b) in acc.data_mut().iter_mut().zip(back.data()) {
            *a += b;
        }
    }
    Ok(acc.scaled(1.0 / perms.len() as f64))
}

/// `γ_H` for an arbitrary subset `H`; the output is `f`'s flattened output.
pub fn gamma_over(f: &dyn VectorFunction, x: &DenseTensor, perms: &[Permutation]) -> Result<Vec<f64>> {
    check_input(f, x)?;
    check_group(perms, x.n())?;
    let mut acc = vec![0.0; f.output_shape().len()];
    for g in perms {
        let y = f.eval(&act_tensor(g, x)?)?;
        for (a, b) in acc.iter_mut().zip(y.data()) {
            *a += b;
        }
    }
    let scale = 1.0 / perms.len() as f64;
    Ok(acc.into_iter().map(|v| v * scale).collect())
}

fn full_group(n: usize) -> Result<Vec<Permutation>> {
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            what: "full-group Reynolds average",
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    enumerate_symmetric(n)
}

pub fn tau_full(f: &dyn VectorFunction, x: &DenseTensor) -> Result<DenseTensor> {
    tau_over(f, x, &full_group(x.n())?)
}

pub fn gamma_full(f: &dyn VectorFunction, x: &DenseTensor) -> Result<Vec<f64>> {
    gamma_over(f, x, &full_group(x.n())?)
}

pub fn tau_design(f: &dyn VectorFunction, x: &DenseTensor, h: &DesignHD) -> Result<DenseTensor> {
    tau_over(f, x, h.elements())
}

pub fn gamma_design(f: &dyn VectorFunction, x: &DenseTensor, h: &[Permutation]) -> Result<Vec<f64>> {
    gamma_over(f, x, h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignReport {
    pub trials: usize,
    pub max_abs_gap: f64,
    pub pass: bool,
}

/// Tolerance for design equalities.
pub const DESIGN_TOLERANCE: f64 = 1e-9;

/// Largest `‖τ_{S_n}(f)(x) - τ_H(f)(x)‖∞` over `trials` random inputs with
/// entries uniform on `[-1, 1]`.
pub fn verify_design(f: &dyn VectorFunction, h: &DesignHD, trials: usize, seed: u64) -> Result<DesignReport> {
    let shape = f.input_shape();
    if shape.n != h.n() {
        return Err(Error::Shape(format!(
            "design over [{}] for inputs over [{}]",
            h.n(),
            shape.n
        )));
    }
    let group = full_group(shape.n)?;
    let mut r = rng::stream(seed, rng::streams::PROBE);
    let mut gap: f64 = 0.0;
    for _ in 0..trials {
        let x = DenseTensor::from_fn(shape.n, shape.order, shape.channels, |_, _| {
            uniform(&mut r, -1.0, 1.0)
        });
        let full = tau_over(f, &x, &group)?;
        let design = tau_over(f, &x, h.elements())?;
        gap = gap.max(full.max_abs_diff(&design)?);
    }
    Ok(DesignReport {
        trials,
        max_abs_gap: gap,
        pass: gap <= DESIGN_TOLERANCE,
    })
}

/// A polynomial term `coeff · Π x_k^{e_k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: f64, exponents: Vec<u32>) -> Self {
        Monomial { coeff, exponents }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .fold(self.coeff, |acc, (&e, &v)| acc * v.powi(e as i32))
    }
}

/// Sparse polynomial in a fixed number of variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    vars: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(vars: usize, terms: Vec<Monomial>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.exponents.len() != vars) {
            return Err(Error::SizeMismatch {
                expected: vars,
                actual: t.exponents.len(),
            });
        }
        Ok(Polynomial { vars, terms })
    }

    pub fn monomial(coeff: f64, exponents: Vec<u32>) -> Self {
        Polynomial {
            vars: exponents.len(),
            terms: vec![Monomial::new(coeff, exponents)],
        }
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// The highest variable index (1-based) with a nonzero exponent.
    pub fn support_end(&self) -> usize {
        self.terms
            .iter()
            .filter_map(|t| t.exponents.iter().rposition(|&e| e > 0))
            .max()
            .map_or(0, |i| i + 1)
    }
}

/// A polynomial on `R^n` viewed as a scalar function of an order-1 tensor.
pub struct PolyMap {
    n: usize,
    poly: Polynomial,
}

impl PolyMap {
    pub fn new(n: usize, poly: Polynomial) -> Result<Self> {
        if poly.vars() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: poly.vars(),
            });
        }
        Ok(PolyMap { n, poly })
    }
}

impl VectorFunction for PolyMap {
    fn input_shape(&self) -> TensorShape {
        TensorShape::new(self.n, 1, 1)
    }

    fn output_shape(&self) -> TensorShape {
        TensorShape::new(self.n, 0, 1)
    }

    fn eval(&self, x: &DenseTensor) -> Result<DenseTensor> {
        DenseTensor::from_vec(self.n, 0, 1, vec![self.poly.eval(x.data())])
    }
}

/// Largest `|γ_{S_n}(p)(x) - γ_{H_d}(γ_{Stab([d])}(p))(x)|` over `points`
/// random inputs in `[-1, 1]^n`.
pub fn gamma_decompose_gap(n: usize, d: usize, poly: &Polynomial, points: usize, seed: u64) -> Result<f64> {
    if n > 7 {
        return Err(Error::TooLarge {
            what: "Reynolds decomposition check",
            n,
            limit: 7,
        });
    }
    let group = enumerate_symmetric(n)?;
    let stab: Vec<Permutation> = group.iter().filter(|g| g.fixes_prefix(d)).cloned().collect();
    let design = enumerate_design(n, d)?;
    let f = PolyMap::new(n, poly.clone())?;
    let stab_avg = FnMap::new(TensorShape::new(n, 1, 1), TensorShape::new(n, 0, 1), |y: &DenseTensor| {
        DenseTensor::from_vec(n, 0, 1, gamma_over(&f, y, &stab)?)
    });
    let mut r = rng::stream(seed, rng::streams::PROBE);
    let mut gap: f64 = 0.0;
    for _ in 0..points {
        let x = DenseTensor::from_fn(n, 1, 1, |_, _| uniform(&mut r, -1.0, 1.0));
        let lhs = gamma_over(&f, &x, &group)?[0];
        let rhs = gamma_over(&stab_avg, &x, design.elements())?[0];
        gap = gap.max((lhs - rhs).abs());
    }
    Ok(gap)
}

/// True iff `γ_G = γ_{H_d} ∘ γ_{Stab([d])}` agrees to `1e-12` on `p`.
pub fn gamma_decompose_check(n: usize, d: usize, poly: &Polynomial, seed: u64) -> Result<bool> {
    Ok(gamma_decompose_gap(n, d, poly, 8, seed)? <= 1e-12)
}

/// Polynomials `h_1, ..., h_s` in `d` variables placed on the coordinates
/// `j_1, ..., j_d` of `R^n`; their group averages `r_i = γ_G(h_i(x_j))` are the
/// candidate generators of the invariant ring.
#[derive(Clone, Debug)]
pub struct GeneratorSet {
    n: usize,
    labels: Vec<usize>,
    generators: Vec<Polynomial>,
}

impl GeneratorSet {
    pub fn new(n: usize, labels: Vec<usize>, generators: Vec<Polynomial>) -> Result<Self> {
        let d = labels.len();
        if d == 0 || d > n {
            return Err(Error::InvalidArgument(format!("{d} variables on [{n}]")));
        }
        let mut seen = vec![false; n];
        for &j in &labels {
            if j == 0 || j > n {
                return Err(Error::IndexOutOfRange { index: j, n });
            }
            if std::mem::replace(&mut seen[j - 1], true) {
                return Err(Error::InvalidArgument(format!("label {j} repeats")));
            }
        }
        if let Some(h) = generators.iter().find(|h| h.vars() != d) {
            return Err(Error::SizeMismatch {
                expected: d,
                actual: h.vars(),
            });
        }
        Ok(GeneratorSet { n, labels, generators })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn generators(&self) -> &[Polynomial] {
        &self.generators
    }

    /// `h_i(x_{j_1}, ..., x_{j_d})` as a polynomial on `R^n`.
    pub fn lift(&self, i: usize) -> Polynomial {
        let h = &self.generators[i];
        let terms = h
            .terms()
            .iter()
            .map(|t| {
                let mut e = vec![0; self.n];
                for (k, &j) in self.labels.iter().enumerate() {
                    e[j - 1] = t.exponents[k];
                }
                Monomial::new(t.coeff, e)
            })
            .collect();
        Polynomial::new(self.n, terms).expect("lifted to n variables")
    }

    /// `r_i(x)` through the design `H_d`: `(1/|H_d|) Σ h_i((g·x)_1, ..., (g·x)_d)`.
    ///
    /// Reading the first `d` coordinates of `g·x` instead of `x_j` is a
    /// relabelling by a fixed permutation, which the group average absorbs.
    pub fn realize(&self, i: usize, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::SizeMismatch {
                expected: self.n,
                actual: x.len(),
            });
        }
        let design = enumerate_design(self.n, self.d())?;
        let h = &self.generators[i];
        let mut acc = 0.0;
        let mut y = vec![0.0; self.d()];
        for g in design.elements() {
            let gi = g.inverse();
            for (k, v) in y.iter_mut().enumerate() {
                *v = x[gi.apply0(k)];
            }
            acc += h.eval(&y);
        }
        Ok(acc / design.len() as f64)
    }
}

/// Power sums on `R^n`: `h_i = y^i` for `i = 1..n`, one variable at `x_1`.
pub fn power_sum_generators(n: usize) -> Result<GeneratorSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    GeneratorSet::new(
        n,
        vec![1],
        (1..=n as u32).map(|i| Polynomial::monomial(1.0, vec![i])).collect(),
    )
}
