//! vMF and RBF kernels, Gram matrices, kernel-gradient sums and the median
//! bandwidth heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Real};

pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(zᵀz' / Δ)`
    Vmf,
    /// `exp(-||x - y||² / (2σ²))`
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    Fixed,
    MedianHeuristic,
}

/// Kernel choice plus bandwidth policy. `bandwidth` is Δ for vmf and σ² for
/// rbf, and is only read when `mode` is [`BandwidthMode::Fixed`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    pub bandwidth: T,
    pub mode: BandwidthMode,
    pub floor: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn fixed(family: KernelFamily, bandwidth: T) -> Self {
        Self {
            family,
            bandwidth,
            mode: BandwidthMode::Fixed,
            floor: T::lit(DEFAULT_BANDWIDTH_FLOOR),
        }
    }

    pub fn median(family: KernelFamily) -> Self {
        Self {
            family,
            bandwidth: T::one(),
            mode: BandwidthMode::MedianHeuristic,
            floor: T::lit(DEFAULT_BANDWIDTH_FLOOR),
        }
    }

    pub fn with_floor(mut self, floor: T) -> Self {
        self.floor = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > T::zero()) {
            return Err(Error::param("bandwidth_floor", "must be > 0"));
        }
        if self.mode == BandwidthMode::Fixed && !(self.bandwidth > T::zero()) {
            return Err(Error::param("bandwidth", "fixed bandwidth must be > 0"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> KernelSpec<U> {
        KernelSpec {
            family: self.family,
            bandwidth: U::lit(self.bandwidth.as_f64()),
            mode: self.mode,
            floor: U::lit(self.floor.as_f64()),
        }
    }

    /// Bandwidth actually used for this batch.
    pub fn resolve(&self, z: &Matrix<T>) -> Result<T> {
        self.validate()?;
        match (self.mode, self.family) {
            (BandwidthMode::Fixed, _) => Ok(self.bandwidth),
            (BandwidthMode::MedianHeuristic, KernelFamily::Vmf) => median_bandwidth(z, self.floor),
            (BandwidthMode::MedianHeuristic, KernelFamily::Rbf) => {
                median_sq_distance(z, self.floor)
            }
        }
    }

    /// Kernel value at a resolved bandwidth.
    #[inline]
    pub fn eval(&self, x: &[T], y: &[T], bandwidth: T) -> T {
        match self.family {
            KernelFamily::Vmf => (dot(x, y) / bandwidth).exp(),
            KernelFamily::Rbf => (-sq_dist(x, y) / (T::lit(2.0) * bandwidth)).exp(),
        }
    }
}

fn sq_dist<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

pub fn vmf_kernel<T: Real>(z: &[T], z2: &[T], delta: T) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(Error::param("delta", "vMF bandwidth must be > 0"));
    }
    ensure_dim(z.len(), z2.len())?;
    Ok((dot(z, z2) / delta).exp())
}

pub fn rbf_kernel<T: Real>(x: &[T], y: &[T], sigma2: T) -> Result<T> {
    if !(sigma2 > T::zero()) {
        return Err(Error::param("sigma2", "RBF bandwidth must be > 0"));
    }
    ensure_dim(x.len(), y.len())?;
    Ok((-sq_dist(x, y) / (T::lit(2.0) * sigma2)).exp())
}

/// Median of a list; even counts take the midpoint of the two central values.
pub fn median<T: Real>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    })
}

fn median_pairwise<T: Real>(z: &Matrix<T>, floor: T, f: impl Fn(&[T], &[T]) -> T) -> Result<T> {
    let m = z.rows();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: m });
    }
    let mut vals = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            vals.push(f(z.row(i), z.row(j)));
        }
    }
    let med = median(&mut vals).unwrap_or(T::zero());
    Ok(med.max(floor))
}

/// Median over distinct pairs of the cosine distance `1 − zᵢ·zⱼ`, clamped
/// below by `floor`.
pub fn median_bandwidth<T: Real>(z: &Matrix<T>, floor: T) -> Result<T> {
    median_pairwise(z, floor, |a, b| T::one() - dot(a, b))
}

/// Median over distinct pairs of `||xᵢ − xⱼ||²`, clamped below by `floor`.
/// This is the rbf σ² under the median heuristic.
pub fn median_sq_distance<T: Real>(x: &Matrix<T>, floor: T) -> Result<T> {
    median_pairwise(x, floor, sq_dist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T> {
    pub values: Matrix<T>,
    pub kernel: KernelSpec<T>,
    pub resolved_bandwidth: T,
}

fn check_batch<T: Real>(z: &Matrix<T>, spec: &KernelSpec<T>) -> Result<()> {
    spec.validate()?;
    if z.rows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    Ok(())
}

/// `K_ij = k(z_i, z_j)`.
pub fn gram<T: Real>(z: &Matrix<T>, spec: &KernelSpec<T>) -> Result<GramMatrix<T>> {
    check_batch(z, spec)?;
    let bw = spec.resolve(z)?;
    Ok(GramMatrix {
        values: gram_at(z, spec, bw, T::zero()),
        kernel: *spec,
        resolved_bandwidth: bw,
    })
}

/// Gram matrix with every vmf log-entry shifted by `-shift`; rbf ignores the
/// shift. Filled symmetrically so `K_ij` and `K_ji` are bitwise equal.
pub(crate) fn gram_at<T: Real>(z: &Matrix<T>, spec: &KernelSpec<T>, bw: T, shift: T) -> Matrix<T> {
    let m = z.rows();
    let mut k = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = match spec.family {
                KernelFamily::Vmf => (dot(z.row(i), z.row(j)) / bw - shift).exp(),
                KernelFamily::Rbf => spec.eval(z.row(i), z.row(j), bw),
            };
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Row `i` is `(1/M) Σ_m ∇_{z_m} k(z_i, z_m)`: the derivative with respect to
/// the kernel's second argument, averaged over the batch.
pub fn gram_grad_sum<T: Real>(z: &Matrix<T>, spec: &KernelSpec<T>) -> Result<Matrix<T>> {
    let g = gram(z, spec)?;
    Ok(grad_sum_from_gram(z, spec.family, &g.values, g.resolved_bandwidth))
}

/// Kernel-gradient sums given an already evaluated (possibly shifted) Gram
/// matrix; a vmf shift scales the result by the same factor as `k`.
pub(crate) fn grad_sum_from_gram<T: Real>(
    z: &Matrix<T>,
    family: KernelFamily,
    k: &Matrix<T>,
    bw: T,
) -> Matrix<T> {
    let (m, d) = z.shape();
    let inv_m = T::one() / T::from_usize_lossy(m);
    let mut out = Matrix::zeros(m, d);
    match family {
        KernelFamily::Vmf => {
            for i in 0..m {
                let s: T = k.row(i).iter().copied().sum::<T>() * inv_m / bw;
                for (o, &zi) in out.row_mut(i).iter_mut().zip(z.row(i)) {
                    *o = s * zi;
                }
            }
        }
        KernelFamily::Rbf => {
            // Σ_m k_im (x_i − x_m) = (Σ_m k_im) x_i − (K X)_i
            for i in 0..m {
                let krow = k.row(i);
                let ksum: T = krow.iter().copied().sum();
                let mut acc = vec![T::zero(); d];
                for (mm, &kv) in krow.iter().enumerate() {
                    for (a, &x) in acc.iter_mut().zip(z.row(mm)) {
                        *a += kv * x;
                    }
                }
                for ((o, &xi), a) in out.row_mut(i).iter_mut().zip(z.row(i)).zip(acc) {
                    *o = (ksum * xi - a) * inv_m / bw;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::uniform_batch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vmf_kernel_examples() {
        let e = std::f64::consts::E;
        assert!((vmf_kernel(&[1.0, 0.0], &[1.0, 0.0], 1.0).unwrap() - e).abs() < 1e-15);
        assert_eq!(vmf_kernel(&[1.0, 0.0], &[0.0, 1.0], 0.3).unwrap(), 1.0);
        assert!((vmf_kernel(&[1.0, 0.0], &[-1.0, 0.0], 0.5).unwrap() - 0.135335f64).abs() < 1e-6);
        assert!(vmf_kernel(&[1.0, 0.0], &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn rbf_kernel_examples() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.7).unwrap(), 1.0);
        let v = rbf_kernel(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((v - 0.367879f64).abs() < 1e-6);
        assert!(rbf_kernel(&[1.0, 0.0], &[0.0, 1.0], 1e12).unwrap() > 1.0 - 1e-11);
        assert!(rbf_kernel(&[1.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn median_bandwidth_examples() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(median_bandwidth(&z, 1e-3).unwrap(), 1.0);
        let same = Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]]).unwrap();
        assert_eq!(median_bandwidth(&same, 1e-3).unwrap(), 1e-3);
        let one = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            median_bandwidth(&one, 1e-3),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn median_of_ten_pairs_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z: Matrix<f64> = uniform_batch(&mut rng, 5, 4);
        let mut pairs = vec![];
        for i in 0..5 {
            for j in 0..5 {
                if i < j {
                    let c: f64 = (0..4).map(|k| z[(i, k)] * z[(j, k)]).sum();
                    pairs.push(1.0 - c);
                }
            }
        }
        assert_eq!(pairs.len(), 10);
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = 0.5 * (pairs[4] + pairs[5]);
        assert!((median_bandwidth(&z, 1e-3).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median::<f64>(&mut []), None);
    }

    #[test]
    fn gram_small_cases() {
        let e = std::f64::consts::E;
        let spec = KernelSpec::fixed(KernelFamily::Vmf, 1.0);
        let one = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let g = gram(&one, &spec).unwrap();
        assert!((g.values[(0, 0)] - e).abs() < 1e-15);
        let two = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = gram(&two, &spec).unwrap();
        assert!((g.values[(0, 0)] - e).abs() < 1e-15);
        assert_eq!(g.values[(0, 1)], 1.0);
        assert_eq!(g.values[(1, 0)], 1.0);
        // median mode with one sample is an error
        assert!(gram(&one, &KernelSpec::median(KernelFamily::Vmf)).is_err());
    }

    #[test]
    fn grad_sum_single_point() {
        let one = Matrix::from_rows(&[[1.0, 2.0, -1.0]]).unwrap();
        let b = gram_grad_sum(&one, &KernelSpec::fixed(KernelFamily::Rbf, 0.5)).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 0.0));
        let e1 = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let b = gram_grad_sum(&e1, &KernelSpec::fixed(KernelFamily::Vmf, 1.0)).unwrap();
        assert!((b[(0, 0)] - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(b[(0, 1)], 0.0);
    }

    #[test]
    fn spec_validation() {
        let mut s = KernelSpec::<f64>::fixed(KernelFamily::Rbf, 0.0);
        assert!(s.validate().is_err());
        s.bandwidth = 1.0;
        s.floor = 0.0;
        assert!(s.validate().is_err());
    }
}
