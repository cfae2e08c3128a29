//! Young diagrams, basis tableaux and extended tableaux.
//!
//! A basis tableau of size `m` and depth `D` is the same thing as a set
//! partition of `[m]` into `D` blocks: each block is a row, sorted ascending,
//! and rows are ordered by length (longest first) with ties broken by the
//! smaller first entry. An index tuple `u ∈ [n]^m` is encoded by the extended
//! tableau `(j, T)` where row `d` of `T` lists the positions holding label `j_d`.

use std::collections::BTreeMap;

use crate::group::{cycle_power, Permutation};
use crate::{Error, Result};

/// A partition `k_1 >= ... >= k_D >= 1` of `m`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YoungDiagram {
    rows: Vec<usize>,
}

impl YoungDiagram {
    pub fn new(rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() || rows.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "Young diagram rows must be positive, got {rows:?}"
            )));
        }
        if rows.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(format!(
                "Young diagram rows must be weakly decreasing, got {rows:?}"
            )));
        }
        Ok(YoungDiagram { rows })
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn size(&self) -> usize {
        self.rows.iter().sum()
    }

    pub fn depth(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisTableau {
    rows: Vec<Vec<usize>>,
}

impl BasisTableau {
    pub fn new(rows: Vec<Vec<usize>>) -> Result<Self> {
        let bad = |why: &str| Err(Error::InvalidArgument(format!("{why}: {rows:?}")));
        if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
            return bad("basis tableau rows must be non-empty");
        }
        let m: usize = rows.iter().map(Vec::len).sum();
        let mut seen = vec![false; m];
        for &v in rows.iter().flatten() {
            if v == 0 || v > m || std::mem::replace(&mut seen[v - 1], true) {
                return bad("entries must be exactly 1..=m");
            }
        }
        if rows.iter().any(|r| r.windows(2).any(|w| w[0] >= w[1])) {
            return bad("rows must be strictly increasing");
        }
        for w in rows.windows(2) {
            if w[0].len() < w[1].len() {
                return bad("row lengths must be weakly decreasing");
            }
            if w[0].len() == w[1].len() && w[0][0] >= w[1][0] {
                return bad("equal-length rows must have increasing first entries");
            }
        }
        Ok(BasisTableau { rows })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn depth(&self) -> usize {
        self.rows.len()
    }

    pub fn size(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn diagram(&self) -> YoungDiagram {
        YoungDiagram {
            rows: self.rows.iter().map(Vec::len).collect(),
        }
    }

    fn concat(&self) -> Vec<usize> {
        self.rows.iter().flatten().copied().collect()
    }

    /// `φ((1, ..., D), T)`: the representative tuple whose position `ℓ` carries
    /// the number of the row containing `ℓ`.
    pub fn base_tuple(&self) -> Vec<usize> {
        self.tuple_with_labels(&(1..=self.depth()).collect::<Vec<_>>())
    }

    fn tuple_with_labels(&self, labels: &[usize]) -> Vec<usize> {
        let mut u = vec![0; self.size()];
        for (row, &label) in self.rows.iter().zip(labels) {
            for &pos in row {
                u[pos - 1] = label;
            }
        }
        u
    }
}

/// A basis tableau paired with distinct labels `j ∈ [n]^D`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExtendedTableau {
    n: usize,
    labels: Vec<usize>,
    shape: BasisTableau,
}

impl ExtendedTableau {
    pub fn new(n: usize, labels: Vec<usize>, shape: BasisTableau) -> Result<Self> {
        if labels.len() != shape.depth() {
            return Err(Error::SizeMismatch {
                expected: shape.depth(),
                actual: labels.len(),
            });
        }
        check_distinct_labels(&labels, n)?;
        Ok(ExtendedTableau { n, labels, shape })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shape(&self) -> &BasisTableau {
        &self.shape
    }
}

fn check_distinct_labels(j: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &v in j {
        if v == 0 || v > n {
            return Err(Error::IndexOutOfRange { index: v, n });
        }
        if std::mem::replace(&mut seen[v - 1], true) {
            return Err(Error::InvalidArgument(format!(
                "labels must be distinct, {v} repeats in {j:?}"
            )));
        }
    }
    Ok(())
}

/// All partitions of `m` in decreasing lexicographic order.
pub fn enum_young_diagrams(m: usize) -> Vec<YoungDiagram> {
    fn rec(rest: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<YoungDiagram>) {
        if rest == 0 {
            out.push(YoungDiagram { rows: cur.clone() });
            return;
        }
        for k in (1..=rest.min(max)).rev() {
            cur.push(k);
            rec(rest - k, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(m, m, &mut Vec::new(), &mut out);
    }
    out
}

/// Basis tableaux of size `m` and depth `depth`, lexicographic in the
/// concatenation of their rows.
pub fn enum_basis_tableaux(m: usize, depth: usize) -> Result<Vec<BasisTableau>> {
    if depth == 0 || depth > m {
        return Err(Error::InvalidArgument(format!(
            "tableau depth {depth} outside 1..={m}"
        )));
    }
    // restricted growth strings: block[i] <= 1 + max(block[..i])
    let mut out = Vec::new();
    let mut blocks = vec![0usize; m];
    fn rec(
        i: usize,
        used: usize,
        depth: usize,
        blocks: &mut [usize],
        out: &mut Vec<BasisTableau>,
    ) {
        let m = blocks.len();
        if i == m {
            if used == depth {
                let mut rows = vec![Vec::new(); depth];
                for (pos, &b) in blocks.iter().enumerate() {
                    rows[b].push(pos + 1);
                }
                out.push(canonical_rows(rows));
            }
            return;
        }
        // not enough positions left to open the remaining blocks
        if used + (m - i) < depth {
            return;
        }
        for b in 0..=used.min(depth - 1) {
            blocks[i] = b;
            rec(i + 1, used.max(b + 1), depth, blocks, out);
        }
    }
    rec(0, 0, depth, &mut blocks, &mut out);
    out.sort_by_key(BasisTableau::concat);
    Ok(out)
}

/// The full set `𝒯_m`: depth ascending, each depth in canonical order.
pub fn all_basis_tableaux(m: usize) -> Vec<BasisTableau> {
    (1..=m)
        .flat_map(|d| enum_basis_tableaux(m, d).expect("depth in range"))
        .collect()
}

fn canonical_rows(mut rows: Vec<Vec<usize>>) -> BasisTableau {
    rows.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    BasisTableau { rows }
}

/// `φ(j, T)`: position `ℓ` receives the label of the row containing `ℓ`.
pub fn phi(ext: &ExtendedTableau) -> Vec<usize> {
    ext.shape.tuple_with_labels(&ext.labels)
}

/// Tableau representation `ψ(u)`; inverse of [`phi`].
pub fn psi(u: &[usize], n: usize) -> Result<ExtendedTableau> {
    if u.is_empty() {
        return Err(Error::InvalidArgument("empty index tuple".into()));
    }
    let mut by_value: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &v) in u.iter().enumerate() {
        if v == 0 || v > n {
            return Err(Error::IndexOutOfRange { index: v, n });
        }
        by_value.entry(v).or_default().push(pos + 1);
    }
    let mut rows: Vec<(usize, Vec<usize>)> = by_value.into_iter().collect();
    rows.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.1[0].cmp(&b.1[0])));
    let (labels, rows): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(ExtendedTableau {
        n,
        labels,
        shape: BasisTableau { rows },
    })
}

/// The shape part of `ψ(u)`: which positions of `u` share a value.
pub fn pattern_of(u: &[usize]) -> BasisTableau {
    let mut by_value: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &v) in u.iter().enumerate() {
        by_value.entry(v).or_default().push(pos + 1);
    }
    canonical_rows(by_value.into_values().collect())
}

/// Multiplicities of the distinct values of `u`, descending.
pub fn shape_of(u: &[usize]) -> YoungDiagram {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in u {
        *counts.entry(v).or_default() += 1;
    }
    let mut rows: Vec<usize> = counts.into_values().collect();
    rows.sort_unstable_by(|a, b| b.cmp(a));
    YoungDiagram { rows }
}

/// Exponents `(p_1, ..., p_D)` of the unique design element `g ∈ H_D` with
/// `g·j = (1, ..., D)`.
///
/// `σ_1` rotates `[n]` so that `j_1` lands on 1, then each `σ_d` rotates
/// `{d, ..., n}` so that the current image of `j_d` lands on `d`.
pub fn normalize_exponents(j: &[usize], n: usize) -> Result<Vec<usize>> {
    check_distinct_labels(j, n)?;
    let mut current: Vec<usize> = j.to_vec();
    let mut exps = Vec::with_capacity(j.len());
    for d in 1..=j.len() {
        let len = n - d + 1;
        let v = current[d - 1];
        debug_assert!(v >= d);
        let p = (len - (v - d)) % len;
        exps.push(p);
        // advance the remaining labels through σ_d
        for w in current.iter_mut().skip(d) {
            if *w >= d {
                *w = d + (*w - d + p) % len;
            }
        }
        current[d - 1] = d;
    }
    Ok(exps)
}

/// The unique `g ∈ H_D` with `g·j = (1, ..., D)`.
pub fn normalize(j: &[usize], n: usize) -> Result<Permutation> {
    let exps = normalize_exponents(j, n)?;
    let mut g = Permutation::identity(n);
    for (d, &p) in exps.iter().enumerate() {
        g = cycle_power(n, d + 1, p)?.compose(&g)?;
    }
    Ok(g)
}
