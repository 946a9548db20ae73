//! Unit-hypersphere geometry and the von Mises-Fisher family.
//!
//! A vMF density on `S^{d-1} ⊂ R^d` is `C_d(κ) exp(κ μᵀz)` with
//! `C_d(κ) = κ^{d/2-1} / ((2π)^{d/2} I_{d/2-1}(κ))`. At `κ = 0` it is the
//! uniform law, whose log-density is `-ln |S^{d-1}|`.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, log_sum_exp, norm, Real};

/// Switch point between the power series and the uniform asymptotic
/// expansion in [`log_bessel_i`].
pub const BESSEL_SERIES_CUTOFF: f64 = 50.0;

/// A point on the unit hypersphere (`d ≥ 2`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T>(Vec<T>);

impl<T: Real> Embedding<T> {
    pub fn coords(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.0, &other.0)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// `e_i` in `R^d`.
    pub fn basis(d: usize, i: usize) -> Result<Self> {
        if i >= d {
            return Err(Error::param("i", format!("axis {i} out of range for d={d}")));
        }
        let mut v = vec![T::zero(); d];
        v[i] = T::one();
        normalize(&v)
    }

    /// Stacks embeddings into a batch matrix, one per row.
    pub fn stack(batch: &[Self]) -> Result<Matrix<T>> {
        Matrix::from_rows(&batch.iter().map(|e| e.coords()).collect::<Vec<_>>())
    }
}

impl<T> AsRef<[T]> for Embedding<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// `x / ||x||`. A zero vector is an error, never rescued by an epsilon.
pub fn normalize<T: Real>(x: &[T]) -> Result<Embedding<T>> {
    if x.len() < 2 {
        return Err(Error::param("x", "embeddings need dimension ≥ 2"));
    }
    let n = norm(x);
    if n == T::zero() || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(Embedding(x.iter().map(|&v| v / n).collect()))
}

/// Row-wise normalization of a batch.
pub fn normalize_rows<T: Real>(x: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let n = norm(x.row(i));
        if n == T::zero() || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// `ln |S^{d-1}| = ln(2 π^{d/2} / Γ(d/2))`.
pub fn log_surface_area<T: Real>(d: usize) -> Result<T> {
    if d < 2 {
        return Err(Error::param("d", "sphere dimension must be ≥ 2"));
    }
    let half = T::lit(d as f64 / 2.0);
    Ok(T::lit(2.0).ln() + half * T::PI().ln() - half.lgamma())
}

/// `ln I_ν(x)` for `ν ≥ 0`, `x ≥ 0`.
///
/// Power series (summed in log space) for `x < 50`; above that the uniform
/// asymptotic expansion through `u_4`, written in terms of `r = √(ν²+x²)` so it
/// stays valid down to `ν = 0`. Relative error of the expansion is `O(r⁻⁵)`.
pub fn log_bessel_i<T: Real>(order: T, x: T) -> T {
    if x < T::zero() || order < T::zero() {
        return T::nan();
    }
    if x == T::zero() {
        return if order == T::zero() {
            T::zero()
        } else {
            T::neg_infinity()
        };
    }
    if x < T::lit(BESSEL_SERIES_CUTOFF) {
        log_bessel_i_series(order, x)
    } else {
        log_bessel_i_uniform(order, x)
    }
}

/// Series `Σ_k (x/2)^{2k+ν} / (k! Γ(k+ν+1))`, valid for every `x` but with a
/// term count that grows linearly in `x`.
pub fn log_bessel_i_series<T: Real>(order: T, x: T) -> T {
    let log_half_x = (x / T::lit(2.0)).ln();
    let mut terms = Vec::new();
    let mut best = T::neg_infinity();
    let mut k = 0usize;
    loop {
        let kf = T::from_usize_lossy(k);
        let t = (T::lit(2.0) * kf + order) * log_half_x
            - (kf + T::one()).lgamma()
            - (kf + order + T::one()).lgamma();
        terms.push(t);
        best = best.max(t);
        // terms are unimodal in k; stop well past the peak
        if kf > x && t < best - T::lit(40.0) {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    log_sum_exp(&terms)
}

fn log_bessel_i_uniform<T: Real>(order: T, x: T) -> T {
    let nu = order;
    let r = (nu * nu + x * x).sqrt();
    let t = nu / r;
    let p = T::one() / r;
    // u_k(t)/ν^k = Σ_j c_j t^{j-k} r^{-k}, j ≥ k.
    let poly = |coefs: &[(i32, f64)], k: i32, denom: f64| -> T {
        let s: T = coefs
            .iter()
            .map(|&(j, c)| T::lit(c) * t.powi(j - k))
            .sum();
        s * p.powi(k) / T::lit(denom)
    };
    let u1 = poly(&[(1, 3.0), (3, -5.0)], 1, 24.0);
    let u2 = poly(&[(2, 81.0), (4, -462.0), (6, 385.0)], 2, 1152.0);
    let u3 = poly(
        &[(3, 30375.0), (5, -369603.0), (7, 765765.0), (9, -425425.0)],
        3,
        414720.0,
    );
    let u4 = poly(
        &[
            (4, 4465125.0),
            (6, -94121676.0),
            (8, 349922430.0),
            (10, -446185740.0),
            (12, 185910725.0),
        ],
        4,
        39813120.0,
    );
    let correction = T::one() + u1 + u2 + u3 + u4;
    let eta_term = if nu == T::zero() {
        T::zero()
    } else {
        nu * (x / (nu + r)).ln()
    };
    r + eta_term - T::lit(0.5) * (T::lit(2.0) * T::PI() * r).ln() + correction.ln()
}

/// Mean resultant length `A_d(κ) = I_{d/2}(κ) / I_{d/2-1}(κ)`.
pub fn mean_resultant_length<T: Real>(d: usize, kappa: T) -> T {
    if kappa == T::zero() {
        return T::zero();
    }
    let nu = T::lit(d as f64 / 2.0 - 1.0);
    (log_bessel_i(nu + T::one(), kappa) - log_bessel_i(nu, kappa)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmfDistribution<T> {
    mu: Embedding<T>,
    kappa: T,
}

impl<T: Real> VmfDistribution<T> {
    pub fn new(mu: Embedding<T>, kappa: T) -> Result<Self> {
        if !(kappa >= T::zero()) || !kappa.is_finite() {
            return Err(Error::param("kappa", "concentration must be finite and ≥ 0"));
        }
        Ok(Self { mu, kappa })
    }

    /// Uniform distribution on `S^{d-1}` (κ = 0, μ arbitrary).
    pub fn uniform(d: usize) -> Result<Self> {
        Self::new(Embedding::basis(d, 0)?, T::zero())
    }

    pub fn mu(&self) -> &Embedding<T> {
        &self.mu
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// `ln C_d(κ)`.
    pub fn log_normalizer(&self) -> T {
        let d = self.dim();
        if self.kappa == T::zero() {
            // d ≥ 2 is guaranteed by Embedding.
            return -log_surface_area::<T>(d).unwrap_or(T::nan());
        }
        let half = T::lit(d as f64 / 2.0);
        let nu = half - T::one();
        nu * self.kappa.ln()
            - half * (T::lit(2.0) * T::PI()).ln()
            - log_bessel_i(nu, self.kappa)
    }

    /// Log-density; `z` is treated through `μᵀz` only, so it may also be
    /// evaluated off-sphere.
    pub fn log_density(&self, z: &[T]) -> Result<T> {
        ensure_dim(self.dim(), z.len())?;
        Ok(self.log_normalizer() + self.kappa * dot(self.mu.coords(), z))
    }

    /// Ambient gradient of the log-density: `κ μ`, constant in `z`.
    pub fn ambient_score(&self, z: &[T]) -> Result<Vec<T>> {
        ensure_dim(self.dim(), z.len())?;
        Ok(self.mu.coords().iter().map(|&m| self.kappa * m).collect())
    }

    /// Riemannian gradient on the sphere: `κ (I − z zᵀ) μ`.
    pub fn tangential_score(&self, z: &[T]) -> Result<Vec<T>> {
        ensure_dim(self.dim(), z.len())?;
        let proj = dot(self.mu.coords(), z);
        Ok(self
            .mu
            .coords()
            .iter()
            .zip(z)
            .map(|(&m, &zi)| self.kappa * (m - proj * zi))
            .collect())
    }

    pub fn mean_resultant_length(&self) -> T {
        mean_resultant_length(self.dim(), self.kappa)
    }

    /// `m` i.i.d. draws using Wood's rejection sampler for the `μ`-component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<Vec<Embedding<T>>> {
        if m == 0 {
            return Err(Error::TooFewSamples { needed: 1, found: 0 });
        }
        let d = self.dim();
        let mu: Vec<f64> = self.mu.coords().iter().map(|v| v.as_f64()).collect();
        let kappa = self.kappa.as_f64();
        let mut out = Vec::with_capacity(m);
        if kappa == 0.0 {
            for _ in 0..m {
                out.push(cast_embedding(uniform_on_sphere(rng, d)));
            }
            return Ok(out);
        }
        let dm1 = (d - 1) as f64;
        // b = (-2κ + √(4κ² + (d-1)²)) / (d-1), rearranged to avoid cancellation.
        let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
        let beta = Beta::new(dm1 / 2.0, dm1 / 2.0)
            .map_err(|e| Error::param("dim", e.to_string()))?;
        for _ in 0..m {
            let w = loop {
                let zb: f64 = beta.sample(rng);
                let w = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
                let u: f64 = rng.random();
                if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                    break w;
                }
            };
            let tangent = uniform_tangent(rng, &mu);
            let s = (1.0 - w * w).max(0.0).sqrt();
            let z: Vec<f64> = mu
                .iter()
                .zip(&tangent)
                .map(|(&mi, &ti)| w * mi + s * ti)
                .collect();
            out.push(cast_embedding(z));
        }
        Ok(out)
    }
}

fn cast_embedding<T: Real>(z: Vec<f64>) -> Embedding<T> {
    // renormalize in the target precision so the unit-norm invariant holds there
    let v: Vec<T> = z.into_iter().map(T::lit).collect();
    let n = norm(&v);
    Embedding(v.into_iter().map(|x| x / n).collect())
}

/// Uniform draw on `S^{d-1}` via a normalized Gaussian.
pub fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&g);
        if n > 1e-12 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform unit vector orthogonal to `mu`.
fn uniform_tangent<R: Rng + ?Sized>(rng: &mut R, mu: &[f64]) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
        let p = dot(&g, mu);
        g.iter_mut().zip(mu).for_each(|(gi, &mi)| *gi -= p * mi);
        let n = norm(&g);
        if n > 1e-9 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Batch of `m` uniform points on `S^{d-1}`, one per row.
pub fn uniform_batch<T: Real, R: Rng + ?Sized>(rng: &mut R, m: usize, d: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(m, d);
    for i in 0..m {
        let z: Embedding<T> = cast_embedding(uniform_on_sphere(rng, d));
        out.row_mut(i).copy_from_slice(z.coords());
    }
    out
}
