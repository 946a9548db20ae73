//! Training losses on paired embedding batches: the entropy-bottleneck loss
//! and two baselines (InfoNCE, the alignment + decorrelation form).
//!
//! Every loss is minimized. Gradients are returned with respect to the
//! embedding batches; the encoder's backward pass takes it from there.

use serde::{Deserialize, Serialize};

use crate::entropy::{entropy_surrogate, entropy_surrogate_grad};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, log_sum_exp, Real};
use crate::sphere::log_bessel_i;
use crate::stein::ScoreMatrix;

/// Reported components of the entropy-bottleneck loss.
/// `total = −alignment + ½β(entropy_surr_1 + entropy_surr_2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<T> {
    pub alignment: T,
    pub entropy_surr_1: T,
    pub entropy_surr_2: T,
    pub total: T,
    pub beta: T,
}

impl<T: Real> LossTerms<T> {
    pub fn reassemble(&self) -> T {
        -self.alignment
            + T::lit(0.5) * self.beta * (self.entropy_surr_1 + self.entropy_surr_2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig<T> {
    pub temperature: T,
    pub decorrelation_lambda: T,
}

impl<T: Real> Default for BaselineConfig<T> {
    fn default() -> Self {
        Self {
            temperature: T::lit(0.2),
            decorrelation_lambda: T::one(),
        }
    }
}

impl<T: Real> BaselineConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > T::zero()) {
            return Err(Error::param("temperature", "must be > 0"));
        }
        if !(self.decorrelation_lambda >= T::zero()) {
            return Err(Error::param("decorrelation_lambda", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Gradients of a scalar loss with respect to both embedding batches.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGrad<T> {
    pub z1: Matrix<T>,
    pub z2: Matrix<T>,
}

fn check_pair<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>) -> Result<()> {
    ensure_dim(z1.rows(), z2.rows())?;
    ensure_dim(z1.cols(), z2.cols())?;
    if z1.rows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    Ok(())
}

fn inv_len<T: Real>(m: usize) -> T {
    T::one() / T::from_usize_lossy(m)
}

/// Mean inner product of paired rows.
pub fn alignment<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>) -> Result<T> {
    check_pair(z1, z2)?;
    let s: T = (0..z1.rows()).map(|i| dot(z1.row(i), z2.row(i))).sum();
    Ok(s * inv_len(z1.rows()))
}

/// Gradient of [`alignment`]: `(z2/M, z1/M)`.
pub fn alignment_grad<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>) -> Result<PairGrad<T>> {
    check_pair(z1, z2)?;
    let s = inv_len(z1.rows());
    Ok(PairGrad {
        z1: z2.scale(s),
        z2: z1.scale(s),
    })
}

fn check_beta<T: Real>(beta: T) -> Result<()> {
    if !(beta >= T::zero()) || !beta.is_finite() {
        return Err(Error::param("beta", "must be finite and ≥ 0"));
    }
    Ok(())
}

pub fn mveb_loss<T: Real>(
    z1: &Matrix<T>,
    z2: &Matrix<T>,
    s1: &ScoreMatrix<T>,
    s2: &ScoreMatrix<T>,
    beta: T,
) -> Result<LossTerms<T>> {
    check_beta(beta)?;
    let align = alignment(z1, z2)?;
    let e1 = entropy_surrogate(z1, s1)?.value;
    let e2 = entropy_surrogate(z2, s2)?.value;
    let terms = LossTerms {
        alignment: align,
        entropy_surr_1: e1,
        entropy_surr_2: e2,
        total: T::zero(),
        beta,
    };
    Ok(LossTerms {
        total: terms.reassemble(),
        ..terms
    })
}

/// Loss plus its gradient with respect to `z1` and `z2`. Scores are constants.
pub fn mveb_loss_grad<T: Real>(
    z1: &Matrix<T>,
    z2: &Matrix<T>,
    s1: &ScoreMatrix<T>,
    s2: &ScoreMatrix<T>,
    beta: T,
) -> Result<(LossTerms<T>, PairGrad<T>)> {
    let terms = mveb_loss(z1, z2, s1, s2, beta)?;
    let a = alignment_grad(z1, z2)?;
    let half_beta = T::lit(0.5) * beta;
    let g1 = entropy_surrogate_grad(s1)?.scale(half_beta).sub(&a.z1)?;
    let g2 = entropy_surrogate_grad(s2)?.scale(half_beta).sub(&a.z2)?;
    Ok((terms, PairGrad { z1: g1, z2: g2 }))
}

fn logits<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>, tau: T) -> Result<Matrix<T>> {
    Ok(z1.matmul_transpose(z2)?.scale(T::one() / tau))
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if !(tau > T::zero()) {
        return Err(Error::param("temperature", "must be > 0"));
    }
    Ok(())
}

/// `mean_i −log softmax_j(z1_i·z2_j/τ)[i]`, negatives drawn from the batch.
pub fn infonce_loss<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>, tau: T) -> Result<T> {
    Ok(infonce_loss_grad(z1, z2, tau)?.0)
}

pub fn infonce_loss_grad<T: Real>(
    z1: &Matrix<T>,
    z2: &Matrix<T>,
    tau: T,
) -> Result<(T, PairGrad<T>)> {
    check_tau(tau)?;
    check_pair(z1, z2)?;
    let m = z1.rows();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: m });
    }
    let l = logits(z1, z2, tau)?;
    let mut loss = T::zero();
    // p_ij = softmax over j of row i
    let mut p = Matrix::zeros(m, m);
    for i in 0..m {
        let row = l.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[i];
        for (pj, &v) in p.row_mut(i).iter_mut().zip(row) {
            *pj = (v - lse).exp();
        }
    }
    let inv_m = inv_len::<T>(m);
    loss *= inv_m;
    // dL/dl_ij = (p_ij − δ_ij)/M, l_ij = z1_i·z2_j/τ
    for i in 0..m {
        p[(i, i)] -= T::one();
    }
    let c = inv_m / tau;
    let g1 = p.matmul(z2)?.scale(c);
    let g2 = p.transpose_matmul(z1)?.scale(c);
    Ok((loss, PairGrad { z1: g1, z2: g2 }))
}

/// Large-negative-count limit of InfoNCE minus `log N`, split into its two
/// terms: `aligned = −(1/τ) mean_i z1_i·z2_i` and
/// `lse = mean_i log mean_n exp(z⁻_n·z1_i/τ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfoNceLimitTerms<T> {
    pub aligned: T,
    pub lse: T,
}

impl<T: Real> InfoNceLimitTerms<T> {
    pub fn sum(&self) -> T {
        self.aligned + self.lse
    }
}

pub fn infonce_limit_terms<T: Real>(
    z1: &Matrix<T>,
    z2: &Matrix<T>,
    negatives: &Matrix<T>,
    tau: T,
) -> Result<InfoNceLimitTerms<T>> {
    check_tau(tau)?;
    check_pair(z1, z2)?;
    if negatives.rows() == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    ensure_dim(z1.cols(), negatives.cols())?;
    let aligned = -alignment(z1, z2)? / tau;
    let l = logits(z1, negatives, tau)?;
    let log_n = T::from_usize_lossy(negatives.rows()).ln();
    let lse: T = l.row_iter().map(|r| log_sum_exp(r) - log_n).sum::<T>() * inv_len(z1.rows());
    Ok(InfoNceLimitTerms { aligned, lse })
}

/// `log E_u[exp(uᵀz/τ)]` for `u` uniform on `S^{d-1}` and any unit `z`:
/// `ln Γ(d/2) + ν ln(2τ) + ln I_ν(1/τ)` with `ν = d/2 − 1`.
pub fn uniform_negatives_lse<T: Real>(d: usize, tau: T) -> Result<T> {
    check_tau(tau)?;
    if d < 2 {
        return Err(Error::param("d", "sphere dimension must be ≥ 2"));
    }
    let half = T::lit(d as f64 / 2.0);
    let nu = half - T::one();
    Ok(half.lgamma() + nu * (T::lit(2.0) * tau).ln() + log_bessel_i(nu, T::one() / tau))
}

/// `−alignment + λ (1/M) Σ_i z1_iᵀ F z1_i` with `F = (1/M) Σ_j z1_j z1_jᵀ`.
pub fn decorrelation_loss<T: Real>(z1: &Matrix<T>, z2: &Matrix<T>, lambda: T) -> Result<T> {
    Ok(decorrelation_loss_grad(z1, z2, lambda)?.0)
}

/// Gradient includes the dependence of `F` on the batch:
/// `∂/∂z1_k = −z2_k/M + (4λ/M) F z1_k`.
pub fn decorrelation_loss_grad<T: Real>(
    z1: &Matrix<T>,
    z2: &Matrix<T>,
    lambda: T,
) -> Result<(T, PairGrad<T>)> {
    if !(lambda >= T::zero()) {
        return Err(Error::param("decorrelation_lambda", "must be ≥ 0"));
    }
    let align = alignment(z1, z2)?;
    let m = z1.rows();
    let inv_m = inv_len::<T>(m);
    let f = z1.transpose_matmul(z1)?.scale(inv_m);
    let fz = z1.matmul(&f)?; // rows F z_i (F symmetric)
    let quad: T = (0..m).map(|i| dot(z1.row(i), fz.row(i))).sum::<T>() * inv_m;
    let loss = -align + lambda * quad;
    let a = alignment_grad(z1, z2)?;
    let g1 = fz.scale(T::lit(4.0) * lambda * inv_m).sub(&a.z1)?;
    let g2 = a.z2.scale(-T::one());
    Ok((loss, PairGrad { z1: g1, z2: g2 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::uniform_batch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[[f64; 2]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn alignment_examples() {
        let z = m(&[[0.6, 0.8], [1.0, 0.0]]);
        assert!((alignment(&z, &z).unwrap() - 1.0).abs() < 1e-15);
        assert!((alignment(&z, &z.scale(-1.0)).unwrap() + 1.0).abs() < 1e-15);
        let o = m(&[[-0.8, 0.6], [0.0, 1.0]]);
        assert_eq!(alignment(&z, &o).unwrap(), 0.0);
        assert!(alignment(&z, &m(&[[1.0, 0.0]])).is_err());
    }

    #[test]
    fn mveb_examples() {
        let z1 = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let z2 = m(&[[1.0, 0.0], [1.0, 0.0]]);
        let zero = ScoreMatrix::analytic(Matrix::zeros(2, 2));
        let t = mveb_loss(&z1, &z2, &zero, &zero, 0.01).unwrap();
        assert_eq!(t.alignment, 0.5);
        assert_eq!(t.total, -0.5);
        let s = ScoreMatrix::analytic(z1.clone());
        let t0 = mveb_loss(&z1, &z2, &s, &s, 0.0).unwrap();
        assert_eq!(t0.total, -t0.alignment);
        assert!(mveb_loss(&z1, &z2, &s, &s, -0.1).is_err());
        assert!(matches!(
            mveb_loss(&z1, &z2, &s.clone().attached(), &s, 0.1),
            Err(Error::NotDetached)
        ));
    }

    #[test]
    fn infonce_examples() {
        let z = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let l = infonce_loss(&z, &z, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((l + (e / (e + 1.0)).ln()).abs() < 1e-15);
        assert!((l - 0.313262).abs() < 1e-6);
        let same = m(&[[0.6, 0.8], [0.6, 0.8], [0.6, 0.8]]);
        assert!((infonce_loss(&same, &same, 0.5).unwrap() - 3f64.ln()).abs() < 1e-14);
        assert!(infonce_loss(&m(&[[1.0, 0.0]]), &m(&[[1.0, 0.0]]), 1.0).is_err());
        assert!(infonce_loss(&z, &z, 0.0).is_err());
    }

    #[test]
    fn infonce_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z1: Matrix<f64> = uniform_batch(&mut rng, 6, 4);
        let z2: Matrix<f64> = uniform_batch(&mut rng, 6, 4);
        let tau = 0.3;
        let mut total = 0.0;
        for i in 0..6 {
            let s = |j: usize| (0..4).map(|k| z1[(i, k)] * z2[(j, k)]).sum::<f64>() / tau;
            let denom: f64 = (0..6).map(|j| s(j).exp()).sum();
            total += -(s(i).exp() / denom).ln();
        }
        assert!((infonce_loss(&z1, &z2, tau).unwrap() - total / 6.0).abs() < 1e-12);
    }

    #[test]
    fn limit_terms_examples() {
        let z = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let neg = m(&[[0.0, 1.0]]);
        let anchors = m(&[[1.0, 0.0], [1.0, 0.0]]);
        let t = infonce_limit_terms(&anchors, &anchors, &neg, 1.0).unwrap();
        assert_eq!(t.lse, 0.0);
        let t = infonce_limit_terms(&z, &z, &z, 2.0).unwrap();
        assert_eq!(t.aligned, -0.5);
        assert!(infonce_limit_terms(&z, &z, &Matrix::zeros(0, 2), 1.0).is_err());
    }

    #[test]
    fn uniform_lse_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let neg: Matrix<f64> = uniform_batch(&mut rng, 200_000, 3);
        let a = Matrix::from_rows(&[[0.0, 0.0, 1.0]]).unwrap();
        let t = infonce_limit_terms(&a, &a, &neg, 0.5).unwrap();
        // d = 3: E[e^{κ u_z}] = sinh(κ)/κ
        let exact = (2f64.sinh() / 2.0).ln();
        let analytic = uniform_negatives_lse(3, 0.5).unwrap();
        assert!((analytic - exact).abs() < 1e-12);
        assert!((t.lse - exact).abs() < 0.02);
    }

    #[test]
    fn decorrelation_examples() {
        let z = m(&[[1.0, 0.0]]);
        assert!(decorrelation_loss(&z, &z, 1.0).unwrap().abs() < 1e-15);
        let z1 = m(&[[0.6, 0.8], [1.0, 0.0]]);
        let z2 = m(&[[0.0, 1.0], [0.6, 0.8]]);
        assert_eq!(
            decorrelation_loss(&z1, &z2, 0.0).unwrap(),
            -alignment(&z1, &z2).unwrap()
        );
        // orthonormal batch: F = I/M so every quadratic term is 1/M
        let e = Matrix::<f64>::identity(3);
        let quad = decorrelation_loss(&e, &e, 1.0).unwrap() + 1.0;
        assert!((quad - 1.0 / 3.0).abs() < 1e-15);
        assert!(decorrelation_loss(&e, &e, -1.0).is_err());
    }

    fn fd_check(
        f: &dyn Fn(&Matrix<f64>, &Matrix<f64>) -> f64,
        g: &PairGrad<f64>,
        z1: &Matrix<f64>,
        z2: &Matrix<f64>,
    ) {
        let h = 1e-6;
        for which in 0..2 {
            let base = if which == 0 { z1 } else { z2 };
            let grad = if which == 0 { &g.z1 } else { &g.z2 };
            for idx in 0..base.as_slice().len() {
                let mut p = base.clone();
                let mut q = base.clone();
                p.as_mut_slice()[idx] += h;
                q.as_mut_slice()[idx] -= h;
                let (fp, fq) = if which == 0 {
                    (f(&p, z2), f(&q, z2))
                } else {
                    (f(z1, &p), f(z1, &q))
                };
                let fd = (fp - fq) / (2.0 * h);
                let an = grad.as_slice()[idx];
                assert!((fd - an).abs() < 1e-7, "which={which} idx={idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z1: Matrix<f64> = uniform_batch(&mut rng, 5, 3);
        let z2: Matrix<f64> = uniform_batch(&mut rng, 5, 3);
        let s1 = ScoreMatrix::analytic(uniform_batch(&mut rng, 5, 3));
        let s2 = ScoreMatrix::analytic(uniform_batch(&mut rng, 5, 3));
        let (_, g) = mveb_loss_grad(&z1, &z2, &s1, &s2, 0.3).unwrap();
        fd_check(&|a, b| mveb_loss(a, b, &s1, &s2, 0.3).unwrap().total, &g, &z1, &z2);
        let (_, g) = infonce_loss_grad(&z1, &z2, 0.4).unwrap();
        fd_check(&|a, b| infonce_loss(a, b, 0.4).unwrap(), &g, &z1, &z2);
        let (_, g) = decorrelation_loss_grad(&z1, &z2, 0.7).unwrap();
        fd_check(&|a, b| decorrelation_loss(a, b, 0.7).unwrap(), &g, &z1, &z2);
    }
}
