//! Score-based differential-entropy gradient.
//!
//! For `z = f_φ(v)` the entropy gradient is `∇_φ H(z) = −E_v[∇_z log q(z) ∂z/∂φ]`.
//! With a detached score estimate `S`, the batch scalar
//!
//! ```text
//! surrogate = (1/M) Σ_i S_i · z_i
//! ```
//!
//! has `∇_φ surrogate = (1/M) Σ_i S_i ∂z_i/∂φ ≈ −∇_φ H(z)`. Adding `+β·surrogate`
//! to a minimized loss therefore ascends the entropy.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Real};
use crate::stein::{stein_estimate, ScoreMatrix, ScoreSource, SteinConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropySurrogate<T> {
    pub value: T,
    pub score_source: ScoreSource,
    pub detached: bool,
}

/// `(1/M) Σ_i S_i · z_i`. Rejects score matrices that are not detached.
pub fn entropy_surrogate<T: Real>(z: &Matrix<T>, s: &ScoreMatrix<T>) -> Result<EntropySurrogate<T>> {
    if !s.detached {
        return Err(Error::NotDetached);
    }
    ensure_dim(z.rows(), s.values.rows())?;
    ensure_dim(z.cols(), s.values.cols())?;
    let m = z.rows();
    let total: T = (0..m).map(|i| dot(z.row(i), s.values.row(i))).sum();
    let value = if m == 0 {
        T::zero()
    } else {
        total / T::from_usize_lossy(m)
    };
    Ok(EntropySurrogate {
        value,
        score_source: s.source,
        detached: true,
    })
}

/// Gradient of the surrogate with respect to the embeddings: `S / M`.
/// It does not depend on `z`, which is exactly the detach contract.
pub fn entropy_surrogate_grad<T: Real>(s: &ScoreMatrix<T>) -> Result<Matrix<T>> {
    if !s.detached {
        return Err(Error::NotDetached);
    }
    let m = s.values.rows().max(1);
    Ok(s.values.scale(T::one() / T::from_usize_lossy(m)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianEntropy<T> {
    pub entropy: T,
    /// `∂H/∂A = A⁻ᵀ`
    pub grad: Matrix<T>,
}

/// Entropy of `z = A v`, `v ~ N(0, I)`: `(d/2) ln(2πe) + ln|det A|`.
pub fn analytic_entropy_linear_gaussian<T: Real>(a: &Matrix<T>) -> Result<LinearGaussianEntropy<T>> {
    ensure_dim(a.rows(), a.cols())?;
    let d = a.rows();
    let (inv, log_det) = a.inverse_and_log_abs_det()?;
    let entropy =
        T::lit(d as f64 / 2.0) * (T::lit(2.0) * T::PI() * T::one().exp()).ln() + log_det;
    Ok(LinearGaussianEntropy {
        entropy,
        grad: inv.transpose(),
    })
}

/// How the latent Gaussian batch is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleScheme {
    Iid,
    /// i.i.d. draws whitened so the batch has zero mean and identity second
    /// moment exactly; removes Monte Carlo error in `(1/M) Σ v vᵀ`.
    MomentMatched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckScore {
    Stein,
    /// `−(AAᵀ)⁻¹ z`, the exact score of the pushforward Gaussian.
    Analytic,
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig<T> {
    pub a: Matrix<T>,
    pub samples: usize,
    pub stein: SteinConfig<T>,
    pub score: CheckScore,
    pub scheme: SampleScheme,
    /// Mutation fixture: negate the scores before they enter the surrogate.
    pub flip_score_sign: bool,
}

impl<T: Real> GradCheckConfig<T> {
    pub fn new(a: Matrix<T>, samples: usize, score: CheckScore) -> Self {
        Self {
            a,
            samples,
            stein: SteinConfig::new(
                crate::kernels::KernelSpec::median(crate::kernels::KernelFamily::Rbf),
                T::lit(crate::stein::DEFAULT_RIDGE),
            ),
            score,
            scheme: SampleScheme::Iid,
            flip_score_sign: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub relative_error: T,
    /// `∂ surrogate / ∂A`
    pub surrogate_grad: Matrix<T>,
    /// `−∂H/∂A`
    pub target: Matrix<T>,
}

/// Draws `m × d` standard normals under the given scheme.
pub fn gaussian_batch<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    d: usize,
    scheme: SampleScheme,
) -> Result<Matrix<T>> {
    let v = Matrix::from_fn(m, d, |_, _| T::lit(StandardNormal.sample(rng)));
    match scheme {
        SampleScheme::Iid => Ok(v),
        SampleScheme::MomentMatched => whiten(v),
    }
}

fn whiten<T: Real>(mut v: Matrix<T>) -> Result<Matrix<T>> {
    let (m, d) = v.shape();
    if m <= d {
        return Err(Error::TooFewSamples {
            needed: d + 1,
            found: m,
        });
    }
    let mf = T::from_usize_lossy(m);
    for j in 0..d {
        let mean: T = (0..m).map(|i| v[(i, j)]).sum::<T>() / mf;
        for i in 0..m {
            v[(i, j)] -= mean;
        }
    }
    let cov = v.transpose_matmul(&v)?.scale(T::one() / mf);
    let chol = cov.cholesky()?;
    // rows vᵢ ← L⁻¹ vᵢ, i.e. Vᵀ ← L⁻¹ Vᵀ
    Ok(chol.solve_lower(&v.transpose())?.transpose())
}

/// Runs sample → `z = A v` → score → surrogate → backprop to `A`, and
/// compares against `−∂H/∂A = −A⁻ᵀ` in relative Frobenius norm.
pub fn entropy_grad_check<T: Real, R: Rng + ?Sized>(
    cfg: &GradCheckConfig<T>,
    rng: &mut R,
) -> Result<GradCheckReport<T>> {
    let a = &cfg.a;
    let truth = analytic_entropy_linear_gaussian(a)?;
    let d = a.rows();
    let v = gaussian_batch(rng, cfg.samples, d, cfg.scheme)?;
    let z = v.matmul_transpose(a)?;
    let mut scores = match cfg.score {
        CheckScore::Stein => stein_estimate(&z, &cfg.stein)?,
        CheckScore::Analytic => {
            // ∇ log N(0, AAᵀ) at z is −(AAᵀ)⁻¹ z = −A⁻ᵀ v
            let a_inv_t = truth.grad.clone();
            ScoreMatrix::analytic(v.matmul_transpose(&a_inv_t)?.scale(-T::one()))
        }
    };
    if cfg.flip_score_sign {
        scores = scores.scaled(-T::one());
    }
    // forward value is computed for completeness; the check is on gradients
    entropy_surrogate(&z, &scores)?;
    let dz = entropy_surrogate_grad(&scores)?;
    // z_i = A v_i  ⇒  ∂/∂A = Σ_i dz_iᵀ v_i = dZᵀ V
    let surrogate_grad = dz.transpose_matmul(&v)?;
    let target = truth.grad.scale(-T::one());
    let relative_error = surrogate_grad.sub(&target)?.frobenius_norm() / target.frobenius_norm();
    Ok(GradCheckReport {
        relative_error,
        surrogate_grad,
        target,
    })
}
