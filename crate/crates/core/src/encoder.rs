//! Small MLP encoder `f_φ` with a sphere-normalized output, hand-written
//! reverse mode, momentum SGD and an EMA target copy.
//!
//! # Checkpoint format (version 1)
//!
//! Little-endian binary:
//!
//! ```text
//! magic     8 bytes  "MVEBCKPT"
//! version   u32      1
//! n_layers  u32
//! per layer:
//!   in_dim      u32
//!   out_dim     u32
//!   activation  u8   0 = identity, 1 = relu
//!   weights     out_dim × in_dim f64, row-major
//!   bias        out_dim f64
//! ```

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, norm, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MVEBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            _ => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `out × in`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Affine → activation stack followed by row normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T> {
    layers: Vec<Layer<T>>,
}

/// Activations cached by [`EncoderModel::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    /// Unit-norm embeddings, one row per input.
    pub output: Matrix<T>,
    inputs: Vec<Matrix<T>>,
    pre_activations: Vec<Matrix<T>>,
    norms: Vec<T>,
}

/// Per-parameter gradient accumulators with the model's shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> EncoderModel<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "at least one layer"));
        }
        for w in layers.windows(2) {
            ensure_dim(w[0].out_dim(), w[1].in_dim())?;
        }
        for l in &layers {
            ensure_dim(l.out_dim(), l.bias.len())?;
        }
        let last = layers.last().map(|l| l.activation);
        if last != Some(Activation::Identity) {
            return Err(Error::param("layers", "final layer must be affine (identity)"));
        }
        if layers[layers.len() - 1].out_dim() < 2 {
            return Err(Error::param("output_dim", "must be ≥ 2"));
        }
        Ok(Self { layers })
    }

    /// He-initialized MLP: `input → hidden… (ReLU) → output`, zero biases.
    pub fn new_random<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        if dims.contains(&0) {
            return Err(Error::param("dims", "layer widths must be ≥ 1"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let relu = i + 1 < n;
                let std = if relu { (2.0 / fan_in as f64).sqrt() } else { (1.0 / fan_in as f64).sqrt() };
                let weight = Matrix::from_fn(fan_out, fan_in, |_, _| {
                    let g: f64 = StandardNormal.sample(rng);
                    T::lit(g * std)
                });
                Layer {
                    weight,
                    bias: vec![T::zero(); fan_out],
                    activation: if relu { Activation::Relu } else { Activation::Identity },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameters in layer order, weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        ensure_dim(self.param_count(), params.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// `z = normalize(MLP(v))` row-wise, caching what backward needs.
    pub fn forward(&self, v: &Matrix<T>) -> Result<ForwardPass<T>> {
        ensure_dim(self.input_dim(), v.cols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = v.clone();
        for l in &self.layers {
            let mut pre = x.matmul_transpose(&l.weight)?;
            for i in 0..pre.rows() {
                pre.row_mut(i)
                    .iter_mut()
                    .zip(&l.bias)
                    .for_each(|(p, &b)| *p += b);
            }
            let post = match l.activation {
                Activation::Identity => pre.clone(),
                Activation::Relu => pre.map(|p| p.max(T::zero())),
            };
            inputs.push(x);
            pre_activations.push(pre);
            x = post;
        }
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = norm(x.row(i));
            if n == T::zero() || !n.is_finite() {
                return Err(Error::ZeroVector);
            }
            x.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(ForwardPass {
            output: x,
            inputs,
            pre_activations,
            norms,
        })
    }

    /// Forward without keeping the cache.
    pub fn embed(&self, v: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(v)?.output)
    }

    /// Backpropagates `upstream = ∂L/∂z` to every parameter. The normalization
    /// layer contributes `(I − z zᵀ)/||u||` per row.
    pub fn backward(&self, pass: &ForwardPass<T>, upstream: &Matrix<T>) -> Result<GradientTape<T>> {
        ensure_dim(self.layers.len(), pass.inputs.len())?;
        ensure_dim(pass.output.rows(), upstream.rows())?;
        ensure_dim(pass.output.cols(), upstream.cols())?;
        let z = &pass.output;
        let mut delta = upstream.clone();
        for i in 0..z.rows() {
            let zi = z.row(i);
            let radial = dot(delta.row(i), zi);
            let inv = T::one() / pass.norms[i];
            delta
                .row_mut(i)
                .iter_mut()
                .zip(zi)
                .for_each(|(g, &zv)| *g = (*g - radial * zv) * inv);
        }
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        for li in (0..n).rev() {
            let l = &self.layers[li];
            ensure_dim(l.out_dim(), pass.pre_activations[li].cols())?;
            if l.activation == Activation::Relu {
                let pre = &pass.pre_activations[li];
                delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(pre.as_slice())
                    .for_each(|(d, &p)| {
                        if p <= T::zero() {
                            *d = T::zero();
                        }
                    });
            }
            weights[li] = delta.transpose_matmul(&pass.inputs[li])?;
            let mut b = vec![T::zero(); l.out_dim()];
            for r in delta.row_iter() {
                b.iter_mut().zip(r).for_each(|(acc, &v)| *acc += v);
            }
            biases[li] = b;
            if li > 0 {
                delta = delta.matmul(&l.weight)?;
            }
        }
        Ok(GradientTape { weights, biases })
    }
}

impl<T: Real> GradientTape<T> {
    pub fn zeros_like(model: &EncoderModel<T>) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: model.layers.iter().map(|l| vec![T::zero(); l.out_dim()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure_dim(self.weights.len(), other.weights.len())?;
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a = a.add(b)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            ensure_dim(a.len(), b.len())?;
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    fn check_shape(&self, model: &EncoderModel<T>) -> Result<()> {
        ensure_dim(model.layers.len(), self.weights.len())?;
        for (l, (w, b)) in model.layers.iter().zip(self.weights.iter().zip(&self.biases)) {
            ensure_dim(l.out_dim(), w.rows())?;
            ensure_dim(l.in_dim(), w.cols())?;
            ensure_dim(l.out_dim(), b.len())?;
        }
        Ok(())
    }
}

/// Classical momentum SGD with coupled weight decay:
/// `g ← g + wd·w; v ← μv + g; w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Option<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T, weight_decay: T) -> Result<Self> {
        if !(lr > T::zero()) {
            return Err(Error::param("lr", "learning rate must be > 0"));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(Error::param("sgd_momentum", "must be in [0, 1)"));
        }
        if !(weight_decay >= T::zero()) {
            return Err(Error::param("weight_decay", "must be ≥ 0"));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: None,
        })
    }

    pub fn step(&mut self, model: &mut EncoderModel<T>, tape: &GradientTape<T>) -> Result<()> {
        tape.check_shape(model)?;
        let mut params = model.params_flat();
        let grads = tape.flat();
        let vel = self
            .velocity
            .get_or_insert_with(|| vec![T::zero(); params.len()]);
        for ((w, &g), v) in params.iter_mut().zip(&grads).zip(vel.iter_mut()) {
            let g = g + self.weight_decay * *w;
            *v = self.momentum * *v + g;
            *w -= self.lr * *v;
        }
        model.set_params_flat(&params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumSchedule {
    Constant,
    /// `m(t) = 1 − (1 − m₀)(cos(πt/T) + 1)/2`, rising from `m₀` to 1.
    CosineIncrease,
}

/// EMA shadow of an encoder. Never touched by the optimizer.
#[derive(Clone, Debug)]
pub struct TargetBranch<T> {
    pub params: EncoderModel<T>,
    pub base_momentum: T,
    pub schedule: MomentumSchedule,
}

impl<T: Real> TargetBranch<T> {
    pub fn new(online: &EncoderModel<T>, base_momentum: T, schedule: MomentumSchedule) -> Result<Self> {
        if !(base_momentum >= T::zero() && base_momentum <= T::one()) {
            return Err(Error::param("ema_base", "must be in [0, 1]"));
        }
        Ok(Self {
            params: online.clone(),
            base_momentum,
            schedule,
        })
    }

    pub fn momentum_at(&self, step: usize, total_steps: usize) -> Result<T> {
        if total_steps == 0 || step > total_steps {
            return Err(Error::param(
                "step",
                format!("step {step} outside schedule of {total_steps} steps"),
            ));
        }
        Ok(match self.schedule {
            MomentumSchedule::Constant => self.base_momentum,
            MomentumSchedule::CosineIncrease => {
                let frac = T::from_usize_lossy(step) / T::from_usize_lossy(total_steps);
                let c = ((T::PI() * frac).cos() + T::one()) / T::lit(2.0);
                T::one() - (T::one() - self.base_momentum) * c
            }
        })
    }

    /// `target ← m·target + (1 − m)·online`.
    pub fn ema_update(&mut self, online: &EncoderModel<T>, step: usize, total_steps: usize) -> Result<()> {
        let m = self.momentum_at(step, total_steps)?;
        let mut tgt = self.params.params_flat();
        let src = online.params_flat();
        ensure_dim(tgt.len(), src.len())?;
        for (t, &s) in tgt.iter_mut().zip(&src) {
            *t = m * *t + (T::one() - m) * s;
        }
        self.params.set_params_flat(&tgt)
    }
}

/// Worst per-parameter disagreement between `backward` and central finite
/// differences of `L(φ) = Σ upstream ⊙ f_φ(v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck<T> {
    pub max_relative_error: T,
    pub worst_param: usize,
    pub params_checked: usize,
}

/// Each entry's error is `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
/// The floor keeps parameters whose true gradient is zero (dead ReLUs) from
/// turning round-off into huge ratios.
pub fn finite_difference_check<T: Real>(
    model: &EncoderModel<T>,
    v: &Matrix<T>,
    upstream: &Matrix<T>,
    h: T,
    floor: T,
) -> Result<GradCheck<T>> {
    let pass = model.forward(v)?;
    ensure_dim(pass.output.rows(), upstream.rows())?;
    ensure_dim(pass.output.cols(), upstream.cols())?;
    let analytic = model.backward(&pass, upstream)?.flat();
    let base = model.params_flat();
    let mut probe = model.clone();
    let objective = |m: &EncoderModel<T>| -> Result<T> {
        let z = m.embed(v)?;
        Ok(z.as_slice().iter().zip(upstream.as_slice()).map(|(&a, &b)| a * b).sum())
    };
    let mut worst = (T::zero(), 0);
    let mut params = base.clone();
    for (i, &g) in analytic.iter().enumerate() {
        params[i] = base[i] + h;
        probe.set_params_flat(&params)?;
        let up = objective(&probe)?;
        params[i] = base[i] - h;
        probe.set_params_flat(&params)?;
        let down = objective(&probe)?;
        params[i] = base[i];
        let numeric = (up - down) / (h + h);
        let err = (g - numeric).abs() / g.abs().max(numeric.abs()).max(floor);
        if err > worst.0 || !err.is_finite() {
            worst = (err, i);
        }
    }
    Ok(GradCheck {
        max_relative_error: worst.0,
        worst_param: worst.1,
        params_checked: analytic.len(),
    })
}

pub fn save_checkpoint<T: Real, W: Write>(model: &EncoderModel<T>, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for l in &model.layers {
        w.write_all(&(l.in_dim() as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim() as u32).to_le_bytes())?;
        w.write_all(&[l.activation.tag()])?;
        for &v in l.weight.as_slice().iter().chain(&l.bias) {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn load_checkpoint<T: Real, R: Read>(mut r: R) -> Result<EncoderModel<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an encoder checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let in_dim = read_u32(&mut r)? as usize;
        let out_dim = read_u32(&mut r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])?;
        let w = read_f64s(&mut r, in_dim * out_dim)?;
        let b = read_f64s(&mut r, out_dim)?;
        layers.push(Layer {
            weight: Matrix::from_vec(out_dim, in_dim, w.into_iter().map(T::lit).collect())?,
            bias: b.into_iter().map(T::lit).collect(),
            activation,
        });
    }
    EncoderModel::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: Matrix<f64>, bias: Vec<f64>) -> EncoderModel<f64> {
        EncoderModel::from_layers(vec![Layer {
            weight,
            bias,
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_reduces_to_normalize() {
        let m = single(Matrix::identity(2), vec![0.0, 0.0]);
        let z = m.embed(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
        assert!((z[(0, 0)] - 0.6).abs() < 1e-15 && (z[(0, 1)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_normalized_bias() {
        let m = single(Matrix::zeros(2, 3), vec![1.0, -1.0]);
        let v = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-5.0, 0.0, 9.0]]).unwrap();
        let z = m.embed(&v).unwrap();
        let s = 0.5f64.sqrt();
        for i in 0..2 {
            assert!((z[(i, 0)] - s).abs() < 1e-15 && (z[(i, 1)] + s).abs() < 1e-15);
        }
        let zero = single(Matrix::zeros(2, 3), vec![0.0, 0.0]);
        assert!(matches!(zero.embed(&v), Err(Error::ZeroVector)));
        assert!(m.embed(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn random_net_outputs_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = EncoderModel::<f64>::new_random(5, &[7], 3, &mut rng).unwrap();
        let v = Matrix::from_fn(4, 5, |i, j| (i as f64 + 1.0) * (j as f64 - 2.0) * 0.3);
        let z = m.embed(&v).unwrap();
        for r in z.row_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = EncoderModel::<f64>::new_random(3, &[4], 2, &mut rng).unwrap();
        let v = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.4);
        let pass = m.forward(&v).unwrap();
        let tape = m.backward(&pass, &Matrix::zeros(3, 2)).unwrap();
        assert!(tape.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn radial_upstream_is_annihilated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = EncoderModel::<f64>::new_random(3, &[], 3, &mut rng).unwrap();
        let v = Matrix::from_rows(&[[0.2, -1.0, 0.7]]).unwrap();
        let pass = m.forward(&v).unwrap();
        let tape = m.backward(&pass, &pass.output.scale(2.5)).unwrap();
        assert!(tape.flat().iter().all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn sgd_examples() {
        let mut m = single(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), vec![0.0, 0.0]);
        let before = m.clone();
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        let zero = GradientTape::zeros_like(&m);
        opt.step(&mut m, &zero).unwrap();
        assert_eq!(m, before);

        let mut tape = GradientTape::zeros_like(&m);
        tape.weights[0][(0, 0)] = 2.0;
        let mut plain = Sgd::new(0.1, 0.0, 0.0).unwrap();
        let mut m1 = before.clone();
        plain.step(&mut m1, &tape).unwrap();
        assert!((m1.layers()[0].weight[(0, 0)] - 0.8).abs() < 1e-15);

        let mut heavy = Sgd::new(0.1, 0.9, 0.0).unwrap();
        let mut m2 = before.clone();
        heavy.step(&mut m2, &tape).unwrap();
        let w1 = m2.layers()[0].weight[(0, 0)];
        heavy.step(&mut m2, &tape).unwrap();
        let w2 = m2.layers()[0].weight[(0, 0)];
        let (s1, s2) = (1.0 - w1, w1 - w2);
        assert!((s2 / s1 - 1.9).abs() < 1e-12);

        assert!(Sgd::new(0.0, 0.9, 0.0).is_err());
        assert!(Sgd::new(-1.0, 0.9, 0.0).is_err());
    }

    #[test]
    fn ema_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let online = EncoderModel::<f64>::new_random(3, &[4], 2, &mut rng).unwrap();
        let other = EncoderModel::<f64>::new_random(3, &[4], 2, &mut rng).unwrap();

        let mut frozen = TargetBranch::new(&other, 1.0, MomentumSchedule::CosineIncrease).unwrap();
        frozen.ema_update(&online, 3, 10).unwrap();
        assert_eq!(frozen.params, other);

        let mut copy = TargetBranch::new(&other, 0.0, MomentumSchedule::CosineIncrease).unwrap();
        copy.ema_update(&online, 0, 10).unwrap();
        assert_eq!(copy.params, online);

        let byol = TargetBranch::new(&online, 0.996, MomentumSchedule::CosineIncrease).unwrap();
        assert_eq!(byol.momentum_at(10, 10).unwrap(), 1.0);
        assert!((byol.momentum_at(0, 10).unwrap() - 0.996).abs() < 1e-15);
        assert!(byol.momentum_at(11, 10).is_err());
        assert!(TargetBranch::new(&online, 1.5, MomentumSchedule::Constant).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_rejects_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = EncoderModel::<f64>::new_random(4, &[6, 5], 3, &mut rng).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back: EncoderModel<f64> = load_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert!(load_checkpoint::<f64, _>(&b"NOTACKPT...."[..]).is_err());
        let mut bad_version = buf.clone();
        bad_version[8] = 9;
        assert!(load_checkpoint::<f64, _>(&bad_version[..]).is_err());
        assert!(load_checkpoint::<f64, _>(&buf[..buf.len() - 3]).is_err());
    }
}
