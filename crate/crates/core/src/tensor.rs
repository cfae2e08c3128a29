//! Dense tensors on `[n]^l x a` and the maps that move values between tensor
//! entries and tableau-indexed components.

use std::collections::HashMap;

use ndarray::Array2;

use crate::tableau::{all_basis_tableaux, pattern_of, BasisTableau};
use crate::{Error, Result};

/// A real tensor in `R^{n^l x a}`, row-major over `(i_1, ..., i_l, α)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    n: usize,
    order: usize,
    channels: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(n: usize, order: usize, channels: usize) -> Self {
        DenseTensor {
            n,
            order,
            channels,
            data: vec![0.0; n.pow(order as u32) * channels],
        }
    }

    pub fn from_vec(n: usize, order: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor needs n >= 1 and channels >= 1, got n={n} channels={channels}"
            )));
        }
        let expected = n.pow(order as u32) * channels;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite entry {bad}")));
        }
        Ok(DenseTensor {
            n,
            order,
            channels,
            data,
        })
    }

    /// Builds a tensor entry by entry from `f(u, α)` with 1-based arguments.
    pub fn from_fn(
        n: usize,
        order: usize,
        channels: usize,
        mut f: impl FnMut(&[usize], usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(n.pow(order as u32) * channels);
        for u in tuples(n, order) {
            for alpha in 1..=channels {
                data.push(f(&u, alpha));
            }
        }
        DenseTensor {
            n,
            order,
            channels,
            data,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of index positions, `n^l`.
    pub fn positions(&self) -> usize {
        self.n.pow(self.order as u32)
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

    pub fn same_shape(&self, other: &DenseTensor) -> bool {
        self.n == other.n && self.order == other.order && self.channels == other.channels
    }

    /// Zero-based flat position of the 1-based tuple `u`.
    pub fn position(&self, u: &[usize]) -> Result<usize> {
        if u.len() != self.order {
            return Err(Error::SizeMismatch {
                expected: self.order,
                actual: u.len(),
            });
        }
        position_of(self.n, u)
    }

    pub fn get(&self, u: &[usize], alpha: usize) -> Result<f64> {
        if alpha == 0 || alpha > self.channels {
            return Err(Error::IndexOutOfRange {
                index: alpha,
                n: self.channels,
            });
        }
        Ok(self.data[self.position(u)? * self.channels + alpha - 1])
    }

    /// The channel slice at index tuple `u`.
    pub fn slice_at(&self, u: &[usize]) -> Result<&[f64]> {
        let p = self.position(u)?;
        Ok(&self.data[p * self.channels..(p + 1) * self.channels])
    }

    pub fn scaled(&self, s: f64) -> DenseTensor {
        DenseTensor {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same_shape(other)?;
        Ok(DenseTensor {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// `max |self - other|` over all entries.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "tensor (n={}, order={}, channels={}) vs (n={}, order={}, channels={})",
                self.n, self.order, self.channels, other.n, other.order, other.channels
            )))
        }
    }
}

/// Zero-based row-major position of a 1-based tuple over `[n]`.
pub fn position_of(n: usize, u: &[usize]) -> Result<usize> {
    u.iter().try_fold(0, |acc, &v| {
        if v == 0 || v > n {
            Err(Error::IndexOutOfRange { index: v, n })
        } else {
            Ok(acc * n + v - 1)
        }
    })
}

/// Inverse of [`position_of`].
pub fn tuple_at(n: usize, order: usize, mut pos: usize) -> Vec<usize> {
    let mut u = vec![0; order];
    for k in (0..order).rev() {
        u[k] = pos % n + 1;
        pos /= n;
    }
    u
}

/// All tuples of `[n]^m` in row-major (lexicographic) order.
pub fn tuples(n: usize, m: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.pow(m as u32)).map(move |p| tuple_at(n, m, p))
}

/// `e_u = e_{u_1} ⊗ ... ⊗ e_{u_m}` as an `n^m x 1` tensor.
pub fn basis_vector(n: usize, u: &[usize]) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(n, u.len(), 1);
    let p = position_of(n, u)?;
    t.data[p] = 1.0;
    Ok(t)
}

/// Adds `(v_1 e_u, ..., v_b e_u)` into `acc`.
pub fn scatter(acc: &mut DenseTensor, v: &[f64], u: &[usize]) -> Result<()> {
    if v.len() != acc.channels {
        return Err(Error::SizeMismatch {
            expected: acc.channels,
            actual: v.len(),
        });
    }
    let p = acc.position(u)?;
    let b = acc.channels;
    for (dst, x) in acc.data[p * b..(p + 1) * b].iter_mut().zip(v) {
        *dst += x;
    }
    Ok(())
}

/// Values indexed by the `S_n`-orbits of `[n]^m`, one row per basis tableau in
/// the canonical order of [`all_basis_tableaux`].
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitTensor {
    m: usize,
    channels: usize,
    tableaux: Vec<BasisTableau>,
    values: Vec<f64>,
}

impl OrbitTensor {
    pub fn order(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tableaux(&self) -> &[BasisTableau] {
        &self.tableaux
    }

    /// Row-major `|𝒯_m| x b` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, tableau: &BasisTableau, beta: usize) -> Option<f64> {
        let row = self.tableaux.iter().position(|t| t == tableau)?;
        (beta >= 1 && beta <= self.channels).then(|| self.values[row * self.channels + beta - 1])
    }
}

/// For each flat position of `[n]^m`, the row of its orbit in `𝒯_m`.
///
/// Only tableaux of depth `<= n` have non-empty orbits.
pub fn orbit_labels(n: usize, m: usize) -> (Vec<BasisTableau>, Vec<usize>) {
    let tableaux = all_basis_tableaux(m);
    let index: HashMap<&BasisTableau, usize> =
        tableaux.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let labels = tuples(n, m).map(|u| index[&pattern_of(&u)]).collect();
    (tableaux, labels)
}

fn orbit_totals(x: &DenseTensor) -> (Vec<BasisTableau>, Vec<f64>, Vec<usize>) {
    let (tableaux, labels) = orbit_labels(x.n, x.order);
    let b = x.channels;
    let mut totals = vec![0.0; tableaux.len() * b];
    let mut sizes = vec![0usize; tableaux.len()];
    for (p, &row) in labels.iter().enumerate() {
        sizes[row] += 1;
        for beta in 0..b {
            totals[row * b + beta] += x.data[p * b + beta];
        }
    }
    (tableaux, totals, sizes)
}

/// `Σ(X)_{G·u, β} = Σ_{g ∈ S_n} x_{g·u, β}`, computed by orbit grouping: each
/// orbit total is weighted by the stabilizer size `(n - D)!`.
pub fn orbit_sum(x: &DenseTensor) -> OrbitTensor {
    let (tableaux, mut values, _) = orbit_totals(x);
    let b = x.channels;
    for (row, t) in tableaux.iter().enumerate() {
        let stab = if t.depth() > x.n {
            0.0
        } else {
            (1..=x.n - t.depth()).map(|k| k as f64).product::<f64>()
        };
        for v in &mut values[row * b..(row + 1) * b] {
            *v *= stab;
        }
    }
    OrbitTensor {
        m: x.order,
        channels: b,
        tableaux,
        values,
    }
}

/// Orbit averages: [`orbit_sum`] divided by `|S_n|`, i.e. the mean of the
/// entries in each orbit (zero for empty orbits).
pub fn orbit_mean(x: &DenseTensor) -> OrbitTensor {
    let (tableaux, mut values, sizes) = orbit_totals(x);
    let b = x.channels;
    for (row, &size) in sizes.iter().enumerate() {
        if size > 0 {
            for v in &mut values[row * b..(row + 1) * b] {
                *v /= size as f64;
            }
        }
    }
    OrbitTensor {
        m: x.order,
        channels: b,
        tableaux,
        values,
    }
}

/// Zero padding `(x_1, ..., x_d) ⊗ e_α -> (x_1, ..., x_d, 0, ..., 0) ⊗ e_α`.
///
/// `x` is a row-major `d x a` array.
pub fn zero_pad(x: &[f64], channels: usize, n: usize, order: usize) -> Result<DenseTensor> {
    if channels == 0 || !x.len().is_multiple_of(channels) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of {channels} channels",
            x.len()
        )));
    }
    let d = x.len() / channels;
    let positions = n.pow(order as u32);
    if d > positions {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {d} coordinates into {positions} positions"
        )));
    }
    let mut data = x.to_vec();
    data.resize(positions * channels, 0.0);
    DenseTensor::from_vec(n, order, channels, data)
}

/// Flat positions `φ((1..D), T)` for every `T ∈ 𝒯_m`, in canonical order.
pub fn corner_positions(n: usize, m: usize) -> Result<Vec<usize>> {
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "corner components need n >= m (n={n}, m={m})"
        )));
    }
    all_basis_tableaux(m)
        .iter()
        .map(|t| position_of(n, &t.base_tuple()))
        .collect()
}

/// The slices of `y` at the basis-tableau tuples, as a `|𝒯_m| x b` array.
pub fn corner_components(y: &DenseTensor) -> Result<Array2<f64>> {
    let positions = corner_positions(y.n, y.order)?;
    let b = y.channels;
    let mut out = Array2::zeros((positions.len(), b));
    for (row, &p) in positions.iter().enumerate() {
        for beta in 0..b {
            out[[row, beta]] = y.data[p * b + beta];
        }
    }
    Ok(out)
}
