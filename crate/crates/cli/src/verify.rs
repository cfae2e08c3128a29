//! Property-verification suites. Every check compares against an independent
//! brute-force computation and reports the largest gap it saw.

use std::collections::HashSet;

use anyhow::{bail, Result};
use reynet::group::{act_tensor, cyclic_group, enumerate_design, enumerate_symmetric, Permutation};
use reynet::model::{EquivShape, EquivariantReyNet, Model, ModelKind, ModelSpec, Pooling, ReducedSpec};
use reynet::nn::{init_params, MlpGrads};
use reynet::reynolds::{
    gamma_decompose_gap, gamma_design, gamma_full, tau_design, tau_full, MlpMap, PolyMap, Polynomial,
    ScatteredComponent, TensorShape,
};
use reynet::rng::{self, uniform};
use reynet::tableau::{all_basis_tableaux, normalize, phi, psi, ExtendedTableau};
use reynet::tensor::{orbit_sum, tuples, DenseTensor};
use serde::Serialize;

pub const SUITES: [&str; 9] = [
    "bijection",
    "normalize",
    "equivariance",
    "design",
    "orbitsum",
    "gradcheck",
    "decomposition",
    "powersum",
    "count",
];

/// Largest `max_n` the brute-force suites accept.
pub const BRUTE_FORCE_MAX_N: usize = 8;
/// Largest `max_n` for the evaluation-count suite, which never enumerates `S_n`.
pub const COUNT_MAX_N: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub case: String,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(suite: &'static str, case: String, gap: f64, tolerance: f64) -> Self {
        Check {
            suite,
            case,
            gap,
            tolerance,
            pass: gap <= tolerance,
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    !checks.is_empty() && checks.iter().all(|c| c.pass)
}

pub fn max_gap(checks: &[Check]) -> f64 {
    checks.iter().map(|c| c.gap).fold(0.0, f64::max)
}

fn random_tensor(n: usize, order: usize, channels: usize, r: &mut rng::ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(n, order, channels, |_, _| uniform(r, -1.0, 1.0))
}

/// Injective tuples of `[n]^d` in lexicographic order.
fn injective_tuples(n: usize, d: usize) -> Vec<Vec<usize>> {
    tuples(n, d)
        .filter(|j| j.iter().collect::<HashSet<_>>().len() == d)
        .collect()
}

/// `φ(ψ(u)) = u` on all of `[n]^m`, `ψ(φ(E)) = E` on every extended
/// tableau, and the two sides have equal size.
pub fn bijection(max_n: usize, max_m: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        for m in 1..=max_m {
            let mut failures = 0usize;
            for u in tuples(n, m) {
                if phi(&psi(&u, n)?) != u {
                    failures += 1;
                }
            }
            let mut extended = 0usize;
            for t in all_basis_tableaux(m).into_iter().filter(|t| t.depth() <= n) {
                for j in injective_tuples(n, t.depth()) {
                    let e = ExtendedTableau::new(n, j, t.clone())?;
                    extended += 1;
                    if psi(&phi(&e), n)? != e {
                        failures += 1;
                    }
                }
            }
            if extended != n.pow(m as u32) {
                failures += 1;
            }
            out.push(Check::new("bijection", format!("n={n} m={m}"), failures as f64, 0.0));
        }
    }
    Ok(out)
}

/// Exactly one `g ∈ H_D` maps each injective `j` to `(1..D)`, and
/// `normalize` returns it.
pub fn normalization(max_n: usize, max_d: usize) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        for d in 1..=max_d.min(n) {
            let design = enumerate_design(n, d)?;
            let target: Vec<usize> = (1..=d).collect();
            let mut failures = 0usize;
            for j in injective_tuples(n, d) {
                let hits: Vec<&Permutation> = design
                    .elements()
                    .iter()
                    .filter(|g| g.act_index(&j).is_ok_and(|v| v == target))
                    .collect();
                if hits.len() != 1 || normalize(&j, n)? != *hits[0] {
                    failures += 1;
                }
            }
            out.push(Check::new("normalize", format!("n={n} D={d}"), failures as f64, 0.0));
        }
    }
    Ok(out)
}

/// `τ_{S_n}(f)(g·x) = g·τ_{S_n}(f)(x)` for random MLPs `f` and every `g`.
pub fn reynolds_equivariance(max_n: usize, functions: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for n in 1..=max_n {
        let group = enumerate_symmetric(n)?;
        for l in 1..=2 {
            for m in 1..=2 {
                let input = TensorShape::new(n, l, 1);
                let output = TensorShape::new(n, m, 1);
                let mut gap: f64 = 0.0;
                for k in 0..functions {
                    let mlp = init_params(seed ^ (1000 * n as u64 + 100 * l as u64 + 10 * m as u64 + k as u64), &[input.len(), 16, output.len()])?;
                    let f = MlpMap::new(mlp, input, output)?;
                    let x = random_tensor(n, l, 1, &mut r);
                    let base = tau_full(&f, &x)?;
                    for g in &group {
                        let lhs = tau_full(&f, &act_tensor(g, &x)?)?;
                        gap = gap.max(lhs.max_abs_diff(&act_tensor(g, &base)?)?);
                    }
                }
                out.push(Check::new("equivariance", format!("tau n={n} l={l} m={m}"), gap, 1e-9));
            }
        }
    }
    Ok(out)
}

fn restricted_net(n: usize, l: usize, m: usize, seed: u64) -> Result<EquivariantReyNet> {
    let shape = EquivShape {
        n,
        in_order: l,
        in_channels: 2,
        out_order: m,
        out_channels: 2,
    };
    Ok(EquivariantReyNet::new(
        shape,
        Some(ReducedSpec::stab_restricted(l, m)?),
        &[8],
        &mut rng::stream(seed, rng::streams::INIT),
    )?)
}

/// The `Stab`-restricted network is exactly equivariant under every `g`.
pub fn model_equivariance(max_n: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for n in 1..=max_n {
        let group = enumerate_symmetric(n)?;
        for l in 1..=2 {
            for m in (1..=2).filter(|&m| m <= n) {
                let model = restricted_net(n, l, m, seed + n as u64)?;
                let x = random_tensor(n, l, 2, &mut r);
                let y = model.forward(&x)?;
                let mut gap: f64 = 0.0;
                for g in &group {
                    let lhs = model.forward(&act_tensor(g, &x)?)?;
                    gap = gap.max(lhs.max_abs_diff(&act_tensor(g, &y)?)?);
                }
                out.push(Check::new("equivariance", format!("model n={n} l={l} m={m}"), gap, 1e-9));
            }
        }
    }
    Ok(out)
}

/// `F = Σ_D Σ_T τ_{H_D}(|H_D| f_T ⊗ e_{u_T})`, built literally from
/// `Stab([D])`-invariant `f_T`, is reproduced by the network with
/// `𝒩_T := |H_D| f_T`.
pub fn reconstruction(max_n: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for n in 2..=max_n {
        for m in 1..=2 {
            let model = restricted_net(n, 2, m, seed + 7 * n as u64)?;
            let spec = model.reduced().expect("restricted").clone();
            let x = random_tensor(n, 2, 2, &mut r);
            let mut target = DenseTensor::zeros(n, m, 2);
            let mut sizes = Vec::new();
            for comp in model.components() {
                let t = comp.tableau();
                let design = enumerate_design(n, t.depth())?;
                let size = design.len() as f64;
                sizes.push(size);
                let coords: Vec<Vec<usize>> = spec.coords_for_depth(t.depth()).into_iter().map(<[usize]>::to_vec).collect();
                let f = ScatteredComponent::new(TensorShape::new(n, 2, 2), m, 2, &t.base_tuple(), |y: &DenseTensor| {
                    let v: Vec<f64> = coords.iter().flat_map(|c| y.slice_at(c).expect("in range").to_vec()).collect();
                    comp.mlp().forward(&v).expect("sized").into_iter().map(|o| o * size).collect()
                })?;
                target = target.add(&tau_design(&f, &x, &design)?)?;
            }
            let got = model.forward_with(&x, |c, input| {
                Ok(model.components()[c].mlp().forward(input)?.into_iter().map(|v| v * sizes[c]).collect())
            })?;
            out.push(Check::new("equivariance", format!("reconstruction n={n} m={m}"), got.max_abs_diff(&target)?, 1e-12));
        }
    }
    Ok(out)
}

/// `τ_{S_n} = τ_{H_D}` on `Stab([D])`-invariant components (full `n!` sum as
/// the oracle).
pub fn design(ns: &[usize], depths: &[usize], trials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for &n in ns {
        for &d in depths.iter().filter(|&&d| d <= n) {
            let h = enumerate_design(n, d)?;
            let coords: Vec<Vec<usize>> = tuples(d, 2).collect();
            let mut gap: f64 = 0.0;
            for t in all_basis_tableaux(2).iter().filter(|t| t.depth() == d) {
                let mlp = init_params(seed + 31 * n as u64 + d as u64, &[coords.len(), 16, 2])?;
                let f = ScatteredComponent::new(TensorShape::new(n, 2, 1), 2, 2, &t.base_tuple(), |y: &DenseTensor| {
                    let v: Vec<f64> = coords.iter().map(|c| y.get(c, 1).expect("in range")).collect();
                    mlp.forward(&v).expect("sized")
                })?;
                for _ in 0..trials {
                    let x = random_tensor(n, 2, 1, &mut r);
                    gap = gap.max(tau_full(&f, &x)?.max_abs_diff(&tau_design(&f, &x, &h)?)?);
                }
            }
            out.push(Check::new("design", format!("n={n} D={d}"), gap, 1e-12));
        }
    }
    Ok(out)
}

/// Orbit sums against `Σ_{g ∈ S_n} x_{g·u_T}` enumerated literally.
pub fn orbit_sums(max_n: usize, m: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for n in 1..=max_n {
        let x = random_tensor(n, m, 2, &mut r);
        let fast = orbit_sum(&x);
        let group = enumerate_symmetric(n)?;
        let mut gap: f64 = 0.0;
        for t in all_basis_tableaux(m) {
            for beta in 1..=2 {
                let literal: f64 = if t.depth() > n {
                    0.0
                } else {
                    let u = t.base_tuple();
                    group.iter().map(|g| x.get(&g.act_index(&u).expect("in range"), beta).expect("in range")).sum()
                };
                let got = fast.get(&t, beta).expect("every tableau is listed");
                gap = gap.max((got - literal).abs());
            }
        }
        out.push(Check::new("orbitsum", format!("n={n} m={m}"), gap, 1e-12));
    }
    Ok(out)
}

fn fd_gradients(model: &Model, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, rng::streams::PROBE);
    // zero-initialised biases can leave a pre-activation exactly on a ReLU kink
    let mut model = model.clone();
    let jittered: Vec<f64> = model.flat_params().iter().map(|p| p + uniform(&mut r, -0.1, 0.1)).collect();
    model.set_flat_params(&jittered)?;
    let model = &model;
    let n = model.n();
    let (order, b) = model.output_shape();
    let xs: Vec<DenseTensor> = (0..2).map(|_| random_tensor(n, 2, 1, &mut r)).collect();
    let ups: Vec<DenseTensor> = (0..2).map(|_| random_tensor(n, order, b, &mut r)).collect();
    let objective = |m: &Model| -> Result<f64> {
        let mut total = 0.0;
        for (x, u) in xs.iter().zip(&ups) {
            total += m.forward(x)?.data().iter().zip(u.data()).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(total)
    };
    let refs: Vec<&DenseTensor> = xs.iter().collect();
    let trace = model.forward_batch(&refs, reynet::model::EvalMode::Full)?;
    let analytic: Vec<f64> = model.backward_batch(&trace, &ups)?.iter().flat_map(MlpGrads::flat).collect();
    let base = model.flat_params();
    let mut probe = model.clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        probe.set_flat_params(&p)?;
        let up = objective(&probe)?;
        p[i] -= 2.0 * h;
        probe.set_flat_params(&p)?;
        let fd = (up - objective(&probe)?) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3));
    }
    Ok(worst)
}

/// Central differences (`h = 1e-5`) against the analytic gradients of every
/// model kind at `n = 3`.
pub fn gradcheck(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let orders: &[usize] = if kind.is_invariant() { &[0] } else { &[1, 2] };
        for &m in orders {
            let mut spec = ModelSpec::new(kind, 3, 2, m, vec![8, 8]);
            if kind.is_invariant() {
                spec.body_channels = 2;
            }
            let poolings = if kind.is_invariant() {
                vec![Some(Pooling::OrbitMean), Some(Pooling::MaxDiagOffdiag)]
            } else {
                vec![None]
            };
            for pooling in poolings {
                spec.pooling = pooling;
                let model = Model::build(spec.clone(), seed)?;
                let err = fd_gradients(&model, seed + 1)?;
                let case = match pooling {
                    Some(p) => format!("{} pooling={}", kind.name(), p.name()),
                    None => format!("{} m={m}", kind.name()),
                };
                out.push(Check::new("gradcheck", case, err, 1e-6));
            }
        }
    }
    Ok(out)
}

/// `γ_{S_n} = γ_{H_d} ∘ γ_{Stab([d])}` on random monomials.
pub fn decomposition(max_n: usize, max_d: usize, monomials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for n in 1..=max_n {
        for d in 1..=max_d.min(n) {
            let mut gap: f64 = 0.0;
            for k in 0..monomials {
                let exps: Vec<u32> = (0..n).map(|_| (uniform(&mut r, 0.0, 3.0) as u32).min(2)).collect();
                let coeff = uniform(&mut r, -1.0, 1.0);
                let poly = Polynomial::monomial(coeff, exps);
                gap = gap.max(gamma_decompose_gap(n, d, &poly, 3, seed + k as u64)?);
            }
            out.push(Check::new("decomposition", format!("n={n} d={d}"), gap, 1e-12));
        }
    }
    Ok(out)
}

/// `γ_{S_n}(x_1^i) = γ_{C_n}(x_1^i)`.
pub fn power_sums(max_n: usize, max_i: u32, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for n in 1..=max_n {
        let cyclic = cyclic_group(n, 1)?;
        let mut gap: f64 = 0.0;
        for i in 1..=max_i {
            let mut e = vec![0; n];
            e[0] = i;
            let f = PolyMap::new(n, Polynomial::monomial(1.0, e))?;
            for _ in 0..3 {
                let x = random_tensor(n, 1, 1, &mut r);
                gap = gap.max((gamma_full(&f, &x)?[0] - gamma_design(&f, &x, &cyclic)?[0]).abs());
            }
        }
        out.push(Check::new("powersum", format!("n={n} i<={max_i}"), gap, 1e-12));
    }
    Ok(out)
}

/// Instrumented forward of an `m = 2` network: the number of component calls
/// minus `n²`.
pub fn evaluation_count(ns: &[usize], seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, rng::streams::PROBE);
    for &n in ns {
        for kind in [ModelKind::RedReyNet, ModelKind::ReyNet] {
            let spec = ModelSpec::new(kind, n, 2, 2, vec![4]);
            let model = Model::build(spec, seed)?;
            let reynet::model::Network::Equivariant(net) = model.network() else {
                bail!("equivariant kinds build equivariant networks");
            };
            let x = random_tensor(n, 2, 1, &mut r);
            let mut calls = 0usize;
            net.forward_with(&x, |c, input| {
                calls += 1;
                net.components()[c].mlp().forward(input)
            })?;
            let gap = (calls as f64 - (n * n) as f64).abs();
            out.push(Check::new("count", format!("{} n={n} calls={calls}", kind.name()), gap, 0.0));
        }
    }
    Ok(out)
}

/// The suite `name` at sizes up to `max_n`.
pub fn run_suite(name: &str, max_n: usize, seed: u64) -> Result<Vec<Check>> {
    let limit = if name == "count" { COUNT_MAX_N } else { BRUTE_FORCE_MAX_N };
    if max_n == 0 || max_n > limit {
        return Err(crate::usage(format!("--max-n for suite {name} must be in 1..={limit}")));
    }
    Ok(match name {
        "bijection" => bijection(max_n, 3)?,
        "normalize" => normalization(max_n, 3)?,
        "equivariance" => {
            // the oracle costs (n!)², the network check n!·n²
            let mut v = reynolds_equivariance(max_n.min(5), 20, seed)?;
            v.extend(model_equivariance(max_n.min(7), seed)?);
            v.extend(reconstruction(max_n.min(6), seed)?);
            v
        }
        "design" => {
            let ns: Vec<usize> = (2..=max_n.min(7)).collect();
            design(&ns, &[1, 2], 3, seed)?
        }
        "orbitsum" => orbit_sums(max_n.min(7), 2, seed)?,
        "gradcheck" => gradcheck(seed)?,
        "decomposition" => decomposition(max_n.min(6), 2, 10, seed)?,
        "powersum" => power_sums(max_n, 4, seed)?,
        "count" => {
            let mut ns: Vec<usize> = [3, 5, 10, 20].into_iter().filter(|&n| n <= max_n).collect();
            if !ns.contains(&max_n) && max_n >= 2 {
                ns.push(max_n);
            }
            evaluation_count(&ns, seed)?
        }
        "all" => {
            let mut v = Vec::new();
            for s in SUITES {
                v.extend(run_suite(s, max_n, seed)?);
            }
            v
        }
        other => return Err(crate::usage(format!("unknown suite '{other}'"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for s in SUITES {
            let checks = run_suite(s, 3, 0).unwrap();
            assert!(all_pass(&checks), "{s}: {checks:?}");
        }
    }

    #[test]
    fn guards() {
        assert!(run_suite("bijection", 9, 0).is_err());
        assert!(run_suite("all", 20, 0).is_err());
        assert!(run_suite("nope", 3, 0).is_err());
        let c = run_suite("count", 20, 0).unwrap();
        assert!(all_pass(&c));
        assert!(c.iter().any(|c| c.case.contains("n=20 calls=400")));
    }

    #[test]
    fn a_wrong_design_is_caught() {
        // a depth-1 component checked against the depth-2 design set size
        let f = ScatteredComponent::new(TensorShape::new(4, 2, 1), 2, 1, &[1, 2], |y: &DenseTensor| {
            vec![y.get(&[3, 4], 1).unwrap()]
        })
        .unwrap();
        let x = random_tensor(4, 2, 1, &mut rng::stream(0, 0));
        let gap = tau_full(&f, &x).unwrap().max_abs_diff(&tau_design(&f, &x, &enumerate_design(4, 2).unwrap()).unwrap()).unwrap();
        assert!(gap > 1e-6);
    }
}
