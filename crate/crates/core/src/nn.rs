//! Multilayer perceptrons with reverse-mode gradients, Adam with decoupled
//! weight decay, and the two regression losses.
//!
//! Hidden layers use the rectifier, the output layer is affine. Layer weights
//! are stored `(out, in)`; batched evaluation takes one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;

use crate::rng::uniform;
use crate::tensor::{corner_positions, DenseTensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Activations cached by [`Mlp::forward_batch`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    // inputs[k] is the input to layer k (rows x dims[k])
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn rows(&self) -> usize {
        self.output.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.slices().into_iter().flatten().copied().collect()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl Mlp {
    pub fn new(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weight matrices with {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *dims.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::Shape(format!(
                    "layer {}x{} with bias {} after width {}",
                    w.nrows(),
                    w.ncols(),
                    b.len(),
                    dims.last().unwrap()
                )));
            }
            dims.push(w.nrows());
        }
        let mlp = Mlp {
            dims,
            weights: weights.into_iter().map(|w| w.as_standard_layout().into_owned()).collect(),
            biases,
        };
        if mlp.flat_params().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(mlp)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Mlp {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: dims[1..].iter().map(|&d| Array1::zeros(d)).collect(),
        })
    }

    /// Weights uniform on `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: RngCore + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Mlp::zeros(dims)?;
        for w in &mut mlp.weights {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| uniform(rng, -bound, bound));
        }
        Ok(mlp)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Weights then bias, layer by layer, weights row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::SizeMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut k = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[k..k + s.len()]);
            k += s.len();
        }
        Ok(())
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.forward_batch(x)?.output.into_raw_vec_and_offset().0)
    }

    /// Evaluates every row of `x` and keeps the activations for backward.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<MlpTrace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::SizeMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x.to_owned();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        Ok(MlpTrace { inputs, output: h })
    }

    /// Gradients of `Σ_rows upstream · output` with respect to the parameters
    /// (summed over rows) and to each input row.
    pub fn backward_batch(
        &self,
        trace: &MlpTrace,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        if upstream.dim() != trace.output.dim() {
            return Err(Error::Shape(format!(
                "upstream {:?} vs output {:?}",
                upstream.dim(),
                trace.output.dim()
            )));
        }
        let layers = self.weights.len();
        let mut gw = Vec::with_capacity(layers);
        let mut gb = Vec::with_capacity(layers);
        let mut delta = upstream.to_owned();
        for k in (0..layers).rev() {
            gw.push(delta.t().dot(&trace.inputs[k]));
            gb.push(delta.sum_axis(Axis(0)));
            let mut prev = delta.dot(&self.weights[k]);
            if k > 0 {
                // the stored input of layer k is the rectified output of layer
                // k-1; the rectifier's derivative at 0 is taken as 0
                ndarray::Zip::from(&mut prev)
                    .and(&trace.inputs[k])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            delta = prev;
        }
        gw.reverse();
        gb.reverse();
        Ok((
            MlpGrads {
                weights: gw,
                biases: gb,
            },
            delta,
        ))
    }

    /// Parameter and input gradients of `upstream · forward(x)`.
    pub fn grad(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let xv = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let trace = self.forward_batch(xv)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let (g, dx) = self.backward_batch(&trace, up)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "MLP needs at least two positive widths, got {dims:?}"
        )));
    }
    Ok(())
}

pub fn mlp_forward(p: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    p.forward(x)
}

pub fn mlp_grad(p: &Mlp, x: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
    p.grad(x, upstream)
}

pub fn init_params(seed: u64, dims: &[usize]) -> Result<Mlp> {
    Mlp::init(dims, &mut crate::rng::stream(seed, crate::rng::streams::INIT))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        AdamState {
            config,
            t: 0,
            m: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: block_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn for_mlp(config: AdamConfig, mlp: &Mlp) -> Self {
        let sizes: Vec<usize> = MlpGrads::zeros_like(mlp)
            .slices()
            .iter()
            .map(|s| s.len())
            .collect();
        AdamState::new(config, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update: decoupled decay `p -= lr·wd·p`, then the bias-corrected
    /// Adam step.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::SizeMismatch {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::SizeMismatch {
                    expected: m.len(),
                    actual: if p.len() != m.len() { p.len() } else { g.len() },
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        self.step_slices(params.param_slices_mut(), grads.slices())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
    state.step(params, grads)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    #[serde(rename = "mse")]
    StandardMse,
    #[serde(rename = "corner")]
    CornerMse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::StandardMse => "mse",
            LossKind::CornerMse => "corner",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "mse" | "standard" | "standard_mse" => Some(LossKind::StandardMse),
            "corner" | "corner_mse" => Some(LossKind::CornerMse),
            _ => None,
        }
    }
}

/// Loss value and its gradient with respect to `prediction`.
pub fn loss(
    kind: LossKind,
    prediction: &DenseTensor,
    target: &DenseTensor,
) -> Result<(f64, DenseTensor)> {
    prediction.check_same_shape(target)?;
    let b = prediction.channels();
    let mut grad = DenseTensor::zeros(prediction.n(), prediction.order(), b);
    let p = prediction.data();
    let t = target.data();
    let value = match kind {
        LossKind::StandardMse => {
            let count = p.len() as f64;
            let g = grad.data_mut();
            let mut acc = 0.0;
            for i in 0..p.len() {
                let d = p[i] - t[i];
                acc += d * d;
                g[i] = 2.0 * d / count;
            }
            acc / count
        }
        LossKind::CornerMse => {
            if prediction.order() == 0 {
                return Err(Error::InvalidArgument(
                    "corner loss needs tensor-valued outputs".into(),
                ));
            }
            let positions = corner_positions(prediction.n(), prediction.order())?;
            let count = (positions.len() * b) as f64;
            let g = grad.data_mut();
            let mut acc = 0.0;
            for &pos in &positions {
                for i in pos * b..(pos + 1) * b {
                    let d = p[i] - t[i];
                    acc += d * d;
                    g[i] = 2.0 * d / count;
                }
            }
            acc / count
        }
    };
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(mlp: &Mlp, x: &[f64], upstream: &[f64]) -> f64 {
        // central differences of upstream·f against the analytic gradients
        let h = 1e-5;
        let objective = |m: &Mlp, x: &[f64]| -> f64 {
            m.forward(x)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (g, dx) = mlp.grad(x, upstream).unwrap();
        let analytic = g.flat();
        let base = mlp.flat_params();
        let mut worst: f64 = 0.0;
        let mut probe = mlp.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let up = objective(&probe, x);
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let down = objective(&probe, x);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(fd, analytic[i]));
        }
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let up = objective(mlp, &xp);
            xp[i] -= 2.0 * h;
            let down = objective(mlp, &xp);
            worst = worst.max(rel_err((up - down) / (2.0 * h), dx[i]));
        }
        worst
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 1]).is_err());
    }

    #[test]
    fn single_layer_is_affine() {
        let m = Mlp::new(vec![array![[1.0, 2.0], [0.0, -1.0]]], vec![array![0.5, 0.0]]).unwrap();
        assert_eq!(m.forward(&[3.0, 4.0]).unwrap(), vec![11.5, -4.0]);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn rectifier_on_hidden_layer() {
        let eye = array![[1.0, 0.0], [0.0, 1.0]];
        let m = Mlp::new(vec![eye.clone(), eye], vec![array![0.0, 0.0], array![0.0, 0.0]]).unwrap();
        assert_eq!(m.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn shape_validation() {
        assert!(Mlp::new(vec![array![[1.0, 2.0]]], vec![array![0.0, 0.0]]).is_err());
        assert!(Mlp::new(
            vec![array![[1.0, 2.0]], array![[1.0, 2.0]]],
            vec![array![0.0], array![0.0]]
        )
        .is_err());
        assert!(Mlp::new(vec![array![[f64::NAN]]], vec![array![0.0]]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = init_params(3, &[4, 8, 2]).unwrap();
        let (g, dx) = m.grad(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_network_input_gradient_is_transpose() {
        let w = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]];
        let m = Mlp::new(vec![w.clone()], vec![array![0.1, 0.2]]).unwrap();
        let up = [0.7, -1.3];
        let (_, dx) = m.grad(&[0.3, 0.1, -0.2], &up).unwrap();
        let expect = w.t().dot(&array![0.7, -1.3]);
        assert_eq!(dx, expect.to_vec());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = init_params(11, &[4, 8, 8, 2]).unwrap();
        // away from kinks: every first-layer unit dead would zero the second
        // layer pre-activations exactly
        let x = [1.3, 0.4, -0.7, 0.9];
        let err = fd_check(&m, &x, &[0.6, -1.1]);
        assert!(err <= 1e-6, "{err}");
        // deeper and wider, up to 4 layers of width 64
        for (seed, dims) in [(1, vec![5, 64, 64, 64, 3]), (2, vec![3, 16, 1]), (5, vec![6, 32, 32, 4])] {
            let m = init_params(seed, &dims).unwrap();
            let mut r = crate::rng::stream(seed, 9);
            let x: Vec<f64> = (0..dims[0]).map(|_| uniform(&mut r, -2.0, 2.0)).collect();
            let up: Vec<f64> = (0..*dims.last().unwrap()).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
            let err = fd_check(&m, &x, &up);
            assert!(err <= 1e-6, "dims {dims:?}: {err}");
        }
    }

    #[test]
    fn batch_backward_sums_rows() {
        let m = init_params(4, &[3, 6, 2]).unwrap();
        let rows = [[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let ups = [[1.0, 0.0], [0.3, -0.4]];
        let x = Array2::from_shape_fn((2, 3), |(i, j)| rows[i][j]);
        let u = Array2::from_shape_fn((2, 2), |(i, j)| ups[i][j]);
        let trace = m.forward_batch(x.view()).unwrap();
        let (g, dx) = m.backward_batch(&trace, u.view()).unwrap();
        let mut expect = MlpGrads::zeros_like(&m);
        for i in 0..2 {
            let (gi, dxi) = m.grad(&rows[i], &ups[i]).unwrap();
            expect.add_assign(&gi);
            assert_eq!(dx.row(i).to_vec(), dxi);
        }
        for (a, b) in g.flat().iter().zip(expect.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        assert_eq!(init_params(7, &[4, 8, 2]).unwrap(), init_params(7, &[4, 8, 2]).unwrap());
        assert_ne!(init_params(7, &[4, 8, 2]).unwrap(), init_params(8, &[4, 8, 2]).unwrap());
        let m = init_params(1, &[1000, 1]).unwrap();
        assert!(m.biases()[0].iter().all(|&b| b == 0.0));
        let w = &m.weights()[0];
        let mean = w.mean().unwrap();
        let var = w.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        let expect = 1.0 / (3.0 * 1000.0);
        assert!((var - expect).abs() <= 0.2 * expect, "variance {var}");
    }

    #[test]
    fn adam_zero_gradient_no_decay_is_identity() {
        let mut m = init_params(2, &[3, 4, 1]).unwrap();
        let before = m.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::for_mlp(cfg, &m);
        let z = MlpGrads::zeros_like(&m);
        st.step(&mut m, &z).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn adam_decay_only_step() {
        let mut m = init_params(2, &[3, 4, 1]).unwrap();
        let before = m.flat_params();
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut st = AdamState::for_mlp(cfg, &m);
        let z = MlpGrads::zeros_like(&m);
        st.step(&mut m, &z).unwrap();
        for (a, b) in m.flat_params().iter().zip(before) {
            assert_eq!(*a, b * (1.0 - 0.05));
        }
    }

    #[test]
    fn adam_first_step_hand_computed() {
        // t=1: m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2
        // p1 = p0 (1 - lr wd) - lr g / (|g| + eps)
        let lr = 1e-3;
        let wd = 1e-5;
        let eps = 1e-8;
        let p0 = [0.5, -2.0];
        let g = [0.25, -4e-3];
        let mut params = p0.to_vec();
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        st.step_slices(vec![&mut params[..]], vec![&g[..]]).unwrap();
        for i in 0..2 {
            let expect = p0[i] * (1.0 - lr * wd) - lr * g[i] / (g[i].abs() + eps);
            assert!((params[i] - expect).abs() < 1e-15, "{} vs {}", params[i], expect);
        }
        let mut bad = [0.0; 3];
        assert!(st.step_slices(vec![&mut bad[..]], vec![&g[..]]).is_err());
    }

    #[test]
    fn loss_examples() {
        let z = DenseTensor::zeros(2, 2, 1);
        let p = DenseTensor::from_vec(2, 2, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (std, _) = loss(LossKind::StandardMse, &p, &z).unwrap();
        let (corner, g) = loss(LossKind::CornerMse, &p, &z).unwrap();
        assert_eq!(std, 0.25);
        assert_eq!(corner, 0.5);
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);

        let (v, g) = loss(LossKind::StandardMse, &p, &p).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));

        // corner gradient vanishes off (1,1) and (1,2)
        let p = DenseTensor::from_vec(3, 2, 1, (1..=9).map(f64::from).collect()).unwrap();
        let z = DenseTensor::zeros(3, 2, 1);
        let (_, g) = loss(LossKind::CornerMse, &p, &z).unwrap();
        for (i, &v) in g.data().iter().enumerate() {
            assert_eq!(v != 0.0, i < 2, "entry {i}");
        }
        assert!(loss(LossKind::StandardMse, &p, &DenseTensor::zeros(2, 2, 1)).is_err());
        let scalar = DenseTensor::zeros(3, 0, 1);
        assert!(loss(LossKind::CornerMse, &scalar, &scalar).is_err());
        let small = DenseTensor::zeros(1, 2, 1);
        assert!(loss(LossKind::CornerMse, &small, &small).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let p = DenseTensor::from_vec(3, 2, 2, (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let t = DenseTensor::from_vec(3, 2, 2, (0..18).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        for kind in [LossKind::StandardMse, LossKind::CornerMse] {
            let (_, g) = loss(kind, &p, &t).unwrap();
            for i in 0..18 {
                let mut up = p.clone();
                up.data_mut()[i] += 1e-6;
                let mut dn = p.clone();
                dn.data_mut()[i] -= 1e-6;
                let fd = (loss(kind, &up, &t).unwrap().0 - loss(kind, &dn, &t).unwrap().0) / 2e-6;
                assert!((fd - g.data()[i]).abs() < 1e-8);
            }
        }
    }
}
