//! Stein gradient estimator: nonparametric score estimation from samples.
//!
//! Given `M` samples `x¹…xᴹ` of an unknown density `q`, Stein's identity
//! `E_q[h(x) ∇log q(x)ᵀ + ∇h(x)] = 0` turns into a kernel ridge regression
//! whose solution is
//!
//! ```text
//! Ĝ = −M (K + ηI)⁻¹ B,   K_ij = k(xⁱ, xʲ),   B_ij = (1/M) Σ_m ∂k(xⁱ, xᵐ)/∂x_jᵐ
//! ```
//!
//! Row `i` of `Ĝ` estimates `∇_x log q(xⁱ)`. The estimate assumes the kernel
//! features are in the Stein class of `q` (vanishing boundary terms); this is
//! an assumption about the unknown `q` and is not checked.
//!
//! Sphere-valued inputs are treated as ambient vectors. The solve is a
//! Cholesky factorization of `K + ηI`; a failed factorization is reported,
//! never rescued by adding more ridge.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::kernels::{grad_sum_from_gram, gram_at, KernelFamily, KernelSpec};
use crate::linalg::Matrix;
use crate::scalar::{dot, norm, Real};

pub const DEFAULT_RIDGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinConfig<T> {
    pub kernel: KernelSpec<T>,
    pub ridge_eta: T,
}

impl<T: Real> Default for SteinConfig<T> {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::median(KernelFamily::Vmf),
            ridge_eta: T::lit(DEFAULT_RIDGE),
        }
    }
}

impl<T: Real> SteinConfig<T> {
    pub fn new(kernel: KernelSpec<T>, ridge_eta: T) -> Self {
        Self { kernel, ridge_eta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_eta > T::zero()) || !self.ridge_eta.is_finite() {
            return Err(Error::param("ridge_eta", "ridge must be finite and > 0"));
        }
        self.kernel.validate()
    }

    pub fn cast<U: Real>(&self) -> SteinConfig<U> {
        SteinConfig {
            kernel: self.kernel.cast(),
            ridge_eta: U::lit(self.ridge_eta.as_f64()),
        }
    }
}

/// Where a score matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Stein,
    AnalyticOracle,
}

/// Per-sample score estimates, one row per sample.
///
/// A score matrix is a plain value: nothing downstream differentiates through
/// it. `detached` records whether the producer vouches for that; the entropy
/// surrogate refuses matrices that are not.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<T> {
    pub values: Matrix<T>,
    pub resolved_bandwidth: T,
    pub ridge_eta: T,
    pub source: ScoreSource,
    pub detached: bool,
}

impl<T: Real> ScoreMatrix<T> {
    /// Wraps a known (analytic) score.
    pub fn analytic(values: Matrix<T>) -> Self {
        Self {
            values,
            resolved_bandwidth: T::nan(),
            ridge_eta: T::nan(),
            source: ScoreSource::AnalyticOracle,
            detached: true,
        }
    }

    /// Marks the scores as still carrying a parameter dependency.
    pub fn attached(mut self) -> Self {
        self.detached = false;
        self
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            values: self.values.scale(s),
            ..self.clone()
        }
    }

    /// Projection of every row onto the tangent space at the matching point:
    /// `(I − z zᵀ) s`.
    pub fn tangential(&self, z: &Matrix<T>) -> Result<Matrix<T>> {
        ensure_dim(self.values.rows(), z.rows())?;
        ensure_dim(self.values.cols(), z.cols())?;
        let mut out = self.values.clone();
        for i in 0..z.rows() {
            let zi = z.row(i);
            let p = dot(out.row(i), zi);
            out.row_mut(i)
                .iter_mut()
                .zip(zi)
                .for_each(|(o, &zv)| *o -= p * zv);
        }
        Ok(out)
    }
}

/// `Ĝ = −M (K + ηI)⁻¹ B`.
pub fn stein_estimate<T: Real>(z: &Matrix<T>, cfg: &SteinConfig<T>) -> Result<ScoreMatrix<T>> {
    cfg.validate()?;
    let m = z.rows();
    if m == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    let bw = cfg.kernel.resolve(z)?;
    // vmf entries reach exp(1/Δ), which overflows f64 once Δ < 1/709. Scaling
    // K and B by exp(-c) and η by the same factor leaves Ĝ unchanged.
    let shift = match cfg.kernel.family {
        KernelFamily::Vmf => {
            let mut c = T::neg_infinity();
            for i in 0..m {
                c = c.max(dot(z.row(i), z.row(i)) / bw);
            }
            c
        }
        KernelFamily::Rbf => T::zero(),
    };
    let mut k = gram_at(z, &cfg.kernel, bw, shift);
    let b = grad_sum_from_gram(z, cfg.kernel.family, &k, bw);
    let ridge = cfg.ridge_eta * (-shift).exp();
    for i in 0..m {
        k[(i, i)] += ridge;
    }
    let chol = k.cholesky()?;
    let x = chol.solve(&b)?;
    let values = x.scale(-T::from_usize_lossy(m));
    if !values.is_finite() {
        return Err(Error::NumericalFailure {
            step: 0,
            what: "non-finite Stein score".into(),
        });
    }
    Ok(ScoreMatrix {
        values,
        resolved_bandwidth: bw,
        ridge_eta: cfg.ridge_eta,
        source: ScoreSource::Stein,
        detached: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreError<T> {
    pub mse: T,
    pub mean_cosine: T,
    /// Rows whose true score has zero norm; excluded from `mean_cosine`.
    pub skipped_rows: usize,
}

pub fn score_error<T: Real>(est: &Matrix<T>, truth: &Matrix<T>) -> Result<ScoreError<T>> {
    ensure_dim(truth.rows(), est.rows())?;
    ensure_dim(truth.cols(), est.cols())?;
    let n = est.as_slice().len();
    let sq: T = est
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let mse = if n == 0 {
        T::zero()
    } else {
        sq / T::from_usize_lossy(n)
    };
    let mut cos_sum = T::zero();
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for i in 0..est.rows() {
        let (e, t) = (est.row(i), truth.row(i));
        let tn = norm(t);
        if tn == T::zero() {
            skipped += 1;
            continue;
        }
        let en = norm(e);
        let c = if en == T::zero() {
            T::zero()
        } else {
            dot(e, t) / (en * tn)
        };
        cos_sum += c;
        counted += 1;
    }
    let mean_cosine = if counted == 0 {
        T::nan()
    } else {
        cos_sum / T::from_usize_lossy(counted)
    };
    Ok(ScoreError {
        mse,
        mean_cosine,
        skipped_rows: skipped,
    })
}
