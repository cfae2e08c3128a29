//! The symmetric group `S_n`, its action on index tuples and tensors, the
//! cyclic factors `C_{n-d+1}` and the design sets `H_D` built from them.
//!
//! A [`Permutation`] is stored zero-based internally; every public method
//! speaks 1-based indices, matching `[n] = {1, ..., n}`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Largest `n` for which the full group is ever enumerated (`8! = 40320`).
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// A bijection `g` on `[n]`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    // map[i] = g(i + 1) - 1
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    /// Builds `g` from its one-line notation `[g(1), ..., g(n)]`.
    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        let mut map = Vec::with_capacity(n);
        for &v in images {
            if v == 0 || v > n {
                return Err(Error::IndexOutOfRange { index: v, n });
            }
            if std::mem::replace(&mut seen[v - 1], true) {
                return Err(Error::InvalidArgument(format!(
                    "value {v} appears twice in one-line notation"
                )));
            }
            map.push(v - 1);
        }
        Ok(Permutation { map })
    }

    /// A uniformly random permutation of `[n]`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation { map }
    }

    pub fn n(&self) -> usize {
        self.map.len()
    }

    /// `g(i)` for `i` in `[n]`.
    ///
    /// Panics if `i` is outside `[n]`.
    pub fn apply(&self, i: usize) -> usize {
        assert!(i >= 1 && i <= self.n(), "index {i} outside 1..={}", self.n());
        self.map[i - 1] + 1
    }

    #[inline]
    pub(crate) fn apply0(&self, i: usize) -> usize {
        self.map[i]
    }

    /// One-line notation `[g(1), ..., g(n)]`.
    pub fn one_based(&self) -> Vec<usize> {
        self.map.iter().map(|&v| v + 1).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i == v)
    }

    /// `self ∘ h`, i.e. `i -> self(h(i))`.
    pub fn compose(&self, h: &Permutation) -> Result<Permutation> {
        if self.n() != h.n() {
            return Err(Error::SizeMismatch {
                expected: self.n(),
                actual: h.n(),
            });
        }
        Ok(Permutation {
            map: h.map.iter().map(|&v| self.map[v]).collect(),
        })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.n()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { map: inv }
    }

    /// Componentwise action `g·u = (g(u_1), ..., g(u_m))`.
    pub fn act_index(&self, u: &[usize]) -> Result<Vec<usize>> {
        u.iter()
            .map(|&v| {
                if v == 0 || v > self.n() {
                    Err(Error::IndexOutOfRange {
                        index: v,
                        n: self.n(),
                    })
                } else {
                    Ok(self.map[v - 1] + 1)
                }
            })
            .collect()
    }

    /// True iff `g(i) = i` for every `i <= d`.
    pub fn fixes_prefix(&self, d: usize) -> bool {
        self.map.iter().take(d).enumerate().all(|(i, &v)| i == v)
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation{:?}", self.one_based())
    }
}

pub fn compose(g: &Permutation, h: &Permutation) -> Result<Permutation> {
    g.compose(h)
}

pub fn invert(g: &Permutation) -> Permutation {
    g.inverse()
}

pub fn act_index(g: &Permutation, u: &[usize]) -> Result<Vec<usize>> {
    g.act_index(u)
}

pub fn fixes_prefix(g: &Permutation, d: usize) -> bool {
    g.fixes_prefix(d)
}

/// Tensor action `(g·X)_{i_1..i_l, α} = X_{g^{-1}(i_1)..g^{-1}(i_l), α}`.
pub fn act_tensor(g: &Permutation, x: &DenseTensor) -> Result<DenseTensor> {
    if g.n() != x.n() {
        return Err(Error::Shape(format!(
            "permutation of [{}] applied to a tensor over [{}]",
            g.n(),
            x.n()
        )));
    }
    let n = x.n();
    let a = x.channels();
    let inv = g.inverse();
    let positions = x.positions();
    let mut out = vec![0.0; x.data().len()];
    let mut digits = vec![0usize; x.order()];
    for pos in 0..positions {
        // source position: every digit mapped through g^{-1}
        let src = digits.iter().fold(0, |acc, &d| acc * n + inv.map[d]);
        out[pos * a..(pos + 1) * a].copy_from_slice(&x.data()[src * a..(src + 1) * a]);
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            if digits[k] < n {
                break;
            }
            digits[k] = 0;
        }
    }
    DenseTensor::from_vec(n, x.order(), a, out)
}

/// The `k`-th power of the forward cycle `start -> start+1 -> ... -> n -> start`,
/// fixing `1..start-1` pointwise.
pub fn cycle_power(n: usize, start: usize, k: usize) -> Result<Permutation> {
    if start == 0 || start > n {
        return Err(Error::InvalidArgument(format!(
            "cycle start {start} outside 1..={n}"
        )));
    }
    let s = start - 1;
    let len = n - s;
    let map = (0..n)
        .map(|i| if i < s { i } else { s + (i - s + k) % len })
        .collect();
    Ok(Permutation { map })
}

/// The cyclic group on `{start, ..., n}` as the powers `c^0, c^1, ...` of the
/// forward cycle.
pub fn cyclic_group(n: usize, start: usize) -> Result<Vec<Permutation>> {
    if start == 0 || start > n {
        return Err(Error::InvalidArgument(format!(
            "cycle start {start} outside 1..={n}"
        )));
    }
    (0..n - start + 1).map(|k| cycle_power(n, start, k)).collect()
}

/// The design set `H_D = { σ_D ∘ ... ∘ σ_1 }` where `σ_d` ranges over the cyclic
/// group on `{d, ..., n}` and `σ_1` acts first.
///
/// Elements are ordered lexicographically by the exponent tuple `(p_1, ..., p_D)`
/// with `σ_d = c_d^{p_d}`, so the identity is always element 0. For every
/// `j ∈ [n]^D` with distinct entries exactly one element maps `j` to `(1..D)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignHD {
    n: usize,
    depth: usize,
    elements: Vec<Permutation>,
}

impl DesignHD {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn elements(&self) -> &[Permutation] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Position of the element with exponent tuple `(p_1, ..., p_D)`.
    pub fn index_of_exponents(&self, exponents: &[usize]) -> Result<usize> {
        if exponents.len() != self.depth {
            return Err(Error::SizeMismatch {
                expected: self.depth,
                actual: exponents.len(),
            });
        }
        let mut idx = 0;
        for (d, &p) in exponents.iter().enumerate() {
            let order = self.n - d;
            if p >= order {
                return Err(Error::InvalidArgument(format!(
                    "exponent {p} of factor {} exceeds its order {order}",
                    d + 1
                )));
            }
            idx = idx * order + p;
        }
        Ok(idx)
    }
}

/// `σ_D ∘ ... ∘ σ_1` for the exponent tuple `(p_1, ..., p_D)`.
pub fn design_element(n: usize, exponents: &[usize]) -> Result<Permutation> {
    let mut g = Permutation::identity(n);
    for (d, &p) in exponents.iter().enumerate() {
        let sigma = cycle_power(n, d + 1, p)?;
        g = sigma.compose(&g)?;
    }
    Ok(g)
}

pub fn enumerate_design(n: usize, depth: usize) -> Result<DesignHD> {
    if depth == 0 || depth > n {
        return Err(Error::InvalidArgument(format!(
            "design depth {depth} outside 1..={n}"
        )));
    }
    let orders: Vec<usize> = (0..depth).map(|d| n - d).collect();
    let total: usize = orders.iter().product();
    let mut elements = Vec::with_capacity(total);
    let mut exps = vec![0usize; depth];
    for _ in 0..total {
        elements.push(design_element(n, &exps)?);
        for k in (0..depth).rev() {
            exps[k] += 1;
            if exps[k] < orders[k] {
                break;
            }
            exps[k] = 0;
        }
    }
    Ok(DesignHD {
        n,
        depth,
        elements,
    })
}

/// All `n!` permutations, lexicographic in one-line notation.
pub fn enumerate_symmetric(n: usize) -> Result<Vec<Permutation>> {
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            what: "enumeration of S_n",
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![Permutation { map: cur.clone() }];
    while next_permutation(&mut cur) {
        out.push(Permutation { map: cur.clone() });
    }
    Ok(out)
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// The stabilizer `Stab([d])`: permutations of `S_n` fixing `1..d` pointwise.
pub fn prefix_stabilizer(n: usize, d: usize) -> Result<Vec<Permutation>> {
    Ok(enumerate_symmetric(n)?
        .into_iter()
        .filter(|g| g.fixes_prefix(d))
        .collect())
}
