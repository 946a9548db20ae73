//! Synthetic two-view data and representation-quality metrics.
//!
//! Each sample draws a class `c`, a latent `y = μ_c + jitter`, and two views
//!
//! ```text
//! v_k = shared·W_s y + nuisance·W_k n_k + noise·ε_k,   k ∈ {1, 2}
//! ```
//!
//! `W_s` is shared between views; `W_1 ≠ W_2` carry view-private nuisance
//! latents `n_k`. Everything is fixed by the generator seed.
//!
//! # Dataset dump format (version 1)
//!
//! Little-endian binary: magic `"MVEBDATA"`, `u32` version, `u64` m,
//! `u32` input_dim, `u32` latent_dim, `u32` num_classes, `u64` seed, then
//! `v1` and `v2` (m × input_dim f64, row-major), labels (m `u32`), latent
//! (m × latent_dim f64).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, log_sum_exp, norm, Real};

pub const DATA_MAGIC: &[u8; 8] = b"MVEBDATA";
pub const DATA_VERSION: u32 = 1;
const PROTOTYPE_NORM: f64 = 2.0;
/// Prototypes are pairwise at least 60° apart.
const PROTOTYPE_MAX_COS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub shared_scale: f64,
    pub nuisance_scale: f64,
    pub noise_scale: f64,
    /// Standard deviation of the within-class latent jitter.
    pub jitter_scale: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            latent_dim: 8,
            input_dim: 32,
            shared_scale: 1.0,
            nuisance_scale: 1.0,
            noise_scale: 0.1,
            jitter_scale: 0.3,
            seed: 1234,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.latent_dim == 0 || self.input_dim == 0 {
            return Err(Error::param("data", "num_classes, latent_dim and input_dim must be ≥ 1"));
        }
        for (name, v) in [
            ("shared_scale", self.shared_scale),
            ("nuisance_scale", self.nuisance_scale),
            ("noise_scale", self.noise_scale),
            ("jitter_scale", self.jitter_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "data",
                    reason: format!("{name} must be finite and ≥ 0"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPairBatch<T> {
    pub v1: Matrix<T>,
    pub v2: Matrix<T>,
    pub labels: Vec<usize>,
    pub latent: Matrix<T>,
}

impl<T: Real> ViewPairBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fixed prototypes and mixing matrices; draws batches from any RNG.
#[derive(Clone, Debug)]
pub struct ViewGenerator {
    cfg: GenConfig,
    prototypes: Matrix<f64>,
    w_shared: Matrix<f64>,
    w_view: [Matrix<f64>; 2],
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        g * scale
    })
}

impl ViewGenerator {
    pub fn new(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let l = cfg.latent_dim;
        let mut protos: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
        let mut attempts = 0usize;
        while protos.len() < cfg.num_classes {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::param(
                    "num_classes",
                    format!(
                        "cannot place {} prototypes 60° apart in {} dimensions",
                        cfg.num_classes, l
                    ),
                ));
            }
            let g: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&g);
            if n < 1e-12 {
                continue;
            }
            let p: Vec<f64> = g.iter().map(|x| x / n).collect();
            // a single latent dimension can only hold two directions (±)
            if protos.iter().all(|q| dot(&p, q) <= PROTOTYPE_MAX_COS) {
                protos.push(p);
            }
        }
        let prototypes = Matrix::from_rows(&protos)?.scale(PROTOTYPE_NORM);
        let s = 1.0 / (l as f64).sqrt();
        let w_shared = gaussian_matrix(&mut rng, cfg.input_dim, l, s);
        let w1 = gaussian_matrix(&mut rng, cfg.input_dim, l, s);
        let w2 = gaussian_matrix(&mut rng, cfg.input_dim, l, s);
        Ok(Self {
            cfg: cfg.clone(),
            prototypes,
            w_shared,
            w_view: [w1, w2],
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.cfg
    }

    pub fn prototypes(&self) -> &Matrix<f64> {
        &self.prototypes
    }

    pub fn sample<T: Real, R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<ViewPairBatch<T>> {
        if m == 0 {
            return Err(Error::TooFewSamples { needed: 1, found: 0 });
        }
        let c = &self.cfg;
        let (l, d) = (c.latent_dim, c.input_dim);
        let mut labels = Vec::with_capacity(m);
        let mut latent = Matrix::zeros(m, l);
        let mut views = [Matrix::zeros(m, d), Matrix::zeros(m, d)];
        let mut n = vec![0.0; l];
        for i in 0..m {
            let cls = rng.random_range(0..c.num_classes);
            labels.push(cls);
            let y: Vec<f64> = self
                .prototypes
                .row(cls)
                .iter()
                .map(|&p| {
                    let g: f64 = StandardNormal.sample(rng);
                    p + c.jitter_scale * g
                })
                .collect();
            for (k, view) in views.iter_mut().enumerate() {
                for v in n.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let row = view.row_mut(i);
                for (j, out) in row.iter_mut().enumerate() {
                    let shared = dot(self.w_shared.row(j), &y);
                    let private = dot(self.w_view[k].row(j), &n);
                    let eps: f64 = StandardNormal.sample(rng);
                    *out = c.shared_scale * shared + c.nuisance_scale * private + c.noise_scale * eps;
                }
            }
            latent.row_mut(i).copy_from_slice(&y);
        }
        let [v1, v2] = views;
        Ok(ViewPairBatch {
            v1: v1.cast(),
            v2: v2.cast(),
            labels,
            latent: latent.cast(),
        })
    }
}

/// Deterministic batch for `(cfg, cfg.seed, m)`.
pub fn generate<T: Real>(cfg: &GenConfig, m: usize) -> Result<ViewPairBatch<T>> {
    let g = ViewGenerator::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    g.sample(&mut rng, m)
}

pub fn write_dataset<T: Real, W: Write>(batch: &ViewPairBatch<T>, cfg: &GenConfig, mut w: W) -> Result<()> {
    w.write_all(DATA_MAGIC)?;
    w.write_all(&DATA_VERSION.to_le_bytes())?;
    w.write_all(&(batch.len() as u64).to_le_bytes())?;
    w.write_all(&(batch.v1.cols() as u32).to_le_bytes())?;
    w.write_all(&(batch.latent.cols() as u32).to_le_bytes())?;
    w.write_all(&(cfg.num_classes as u32).to_le_bytes())?;
    w.write_all(&cfg.seed.to_le_bytes())?;
    for &v in batch.v1.as_slice().iter().chain(batch.v2.as_slice()) {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    for &l in &batch.labels {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    for &v in batch.latent.as_slice() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Header of a dataset dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub m: usize,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

pub fn read_dataset<T: Real, R: Read>(mut r: R) -> Result<(DatasetHeader, ViewPairBatch<T>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATA_MAGIC {
        return Err(Error::Format("not a dataset dump".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DATA_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    r.read_exact(&mut b8)?;
    let m = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4)?;
    let input_dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let latent_dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let num_classes = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    let mut read_mat = |rows: usize, cols: usize| -> Result<Matrix<T>> {
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf)?;
        let vals = buf
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Matrix::from_vec(rows, cols, vals)
    };
    let v1 = read_mat(m, input_dim)?;
    let v2 = read_mat(m, input_dim)?;
    let mut lb = vec![0u8; m * 4];
    r.read_exact(&mut lb)?;
    let labels = lb
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let mut lat = vec![0u8; m * latent_dim * 8];
    r.read_exact(&mut lat)?;
    let latent = Matrix::from_vec(
        m,
        latent_dim,
        lat.chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
    )?;
    Ok((
        DatasetHeader {
            m,
            input_dim,
            latent_dim,
            num_classes,
            seed,
        },
        ViewPairBatch {
            v1,
            v2,
            labels,
            latent,
        },
    ))
}

/// Full-batch gradient-descent settings for [`linear_probe_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            l2: 1e-3,
        }
    }
}

/// Test accuracy of a multinomial logistic regression trained on frozen
/// features, using the default step count and learning rate.
pub fn linear_probe<T: Real>(
    train_z: &Matrix<T>,
    train_labels: &[usize],
    test_z: &Matrix<T>,
    test_labels: &[usize],
    l2: f64,
) -> Result<f64> {
    let cfg = ProbeConfig {
        l2,
        ..ProbeConfig::default()
    };
    linear_probe_with(train_z, train_labels, test_z, test_labels, &cfg)
}

pub fn linear_probe_with<T: Real>(
    train_z: &Matrix<T>,
    train_labels: &[usize],
    test_z: &Matrix<T>,
    test_labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    ensure_dim(train_z.rows(), train_labels.len())?;
    ensure_dim(test_z.rows(), test_labels.len())?;
    ensure_dim(train_z.cols(), test_z.cols())?;
    if !(cfg.l2 >= 0.0) || !(cfg.lr > 0.0) {
        return Err(Error::param("probe", "need l2 ≥ 0 and lr > 0"));
    }
    let mut seen: Vec<usize> = train_labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::param("train_labels", "need at least two classes"));
    }
    let classes = train_labels
        .iter()
        .chain(test_labels)
        .copied()
        .max()
        .unwrap_or(0)
        + 1;
    let x: Matrix<f64> = train_z.cast();
    let (m, d) = x.shape();
    let mut w = Matrix::<f64>::zeros(classes, d);
    let mut b = vec![0.0; classes];
    let inv_m = 1.0 / m as f64;
    for _ in 0..cfg.steps {
        let logits = x.matmul_transpose(&w)?;
        // dL/dlogits = (softmax − onehot)/M
        let mut delta = Matrix::<f64>::zeros(m, classes);
        for i in 0..m {
            let mut row: Vec<f64> = logits.row(i).iter().zip(&b).map(|(l, bb)| l + bb).collect();
            let lse = log_sum_exp(&row);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp() * inv_m);
            row[train_labels[i]] -= inv_m;
            delta.row_mut(i).copy_from_slice(&row);
        }
        let gw = delta.transpose_matmul(&x)?;
        for c in 0..classes {
            let gb: f64 = (0..m).map(|i| delta[(i, c)]).sum();
            b[c] -= cfg.lr * gb;
            for j in 0..d {
                let g = gw[(c, j)] + cfg.l2 * w[(c, j)];
                w[(c, j)] -= cfg.lr * g;
            }
        }
    }
    if test_labels.is_empty() {
        return Ok(0.0);
    }
    let xt: Matrix<f64> = test_z.cast();
    let logits = xt.matmul_transpose(&w)?;
    let correct = (0..xt.rows())
        .filter(|&i| {
            let pred = logits
                .row(i)
                .iter()
                .zip(&b)
                .map(|(l, bb)| l + bb)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, v)| if v > best.1 { (c, v) } else { best })
                .0;
            pred == test_labels[i]
        })
        .count();
    Ok(correct as f64 / test_labels.len() as f64)
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
}

/// `log mean_{i<j} exp(−2||z_i − z_j||²)`; 0 is the fully collapsed value.
pub fn uniformity_metric<T: Real>(z: &Matrix<T>) -> Result<T> {
    let m = z.rows();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: m });
    }
    let mut terms = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            terms.push(T::lit(-2.0) * sq_dist(z.row(i), z.row(j)));
        }
    }
    Ok(log_sum_exp(&terms) - T::from_usize_lossy(terms.len()).ln())
}

/// Mean over coordinates of the per-coordinate (population) standard
/// deviation. Zero for a constant batch.
pub fn embedding_spread<T: Real>(z: &Matrix<T>) -> Result<T> {
    let (m, d) = z.shape();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: m });
    }
    let mf = T::from_usize_lossy(m);
    let mut total = T::zero();
    for j in 0..d {
        let mean: T = (0..m).map(|i| z[(i, j)]).sum::<T>() / mf;
        let var: T = (0..m).map(|i| (z[(i, j)] - mean).powi(2)).sum::<T>() / mf;
        total += var.sqrt();
    }
    Ok(total / T::from_usize_lossy(d))
}

/// Mean squared distance between paired embeddings.
pub fn alignment_metric<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>) -> Result<T> {
    ensure_dim(z1.rows(), z2.rows())?;
    ensure_dim(z1.cols(), z2.cols())?;
    if z1.rows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    let s: T = (0..z1.rows()).map(|i| sq_dist(z1.row(i), z2.row(i))).sum();
    Ok(s / T::from_usize_lossy(z1.rows()))
}
