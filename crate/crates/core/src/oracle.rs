//! Exact information quantities over small finite joint distributions.
//!
//! All logs are natural. Axes are indices into the joint's shape; the
//! three-axis identities assume the order `(z, v1, v2)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

fn mass_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

/// A probability table over a product of finite alphabets, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint<T> {
    shape: Vec<usize>,
    probs: Vec<T>,
    names: Vec<String>,
}

impl<T: Real> DiscreteJoint<T> {
    pub fn new(shape: Vec<usize>, probs: Vec<T>, names: Vec<String>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidAxes(format!("bad shape {shape:?}")));
        }
        ensure_dim(shape.iter().product(), probs.len())?;
        if names.len() != shape.len() {
            return Err(Error::InvalidAxes(format!(
                "{} names for {} axes",
                names.len(),
                shape.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= T::zero()) || !p.is_finite()) {
            return Err(Error::param("probs", "entries must be finite and nonnegative"));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > mass_tolerance() {
            return Err(Error::param("probs", format!("total mass {total} is not 1")));
        }
        Ok(Self { shape, probs, names })
    }

    /// Axes named `x0, x1, …`.
    pub fn unnamed(shape: Vec<usize>, probs: Vec<T>) -> Result<Self> {
        let names = (0..shape.len()).map(|i| format!("x{i}")).collect();
        Self::new(shape, probs, names)
    }

    /// Builds a joint from unnormalized nonnegative weights.
    pub fn from_weights(shape: Vec<usize>, weights: Vec<T>) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::param("weights", "need positive total weight"));
        }
        Self::unnamed(shape, weights.into_iter().map(|w| w / total).collect())
    }

    /// Full-support joint from normalized i.i.d. Exp(1) draws.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        let w = (0..n)
            .map(|_| {
                let e: f64 = Exp1.sample(rng);
                T::lit(e)
            })
            .collect();
        Self::from_weights(shape.to_vec(), w)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn total_mass(&self) -> T {
        self.probs.iter().copied().sum()
    }

    /// Probability at a multi-index.
    pub fn get(&self, index: &[usize]) -> T {
        self.probs[self.flat_index(index)]
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        for (k, &a) in axes.iter().enumerate() {
            if a >= self.ndim() {
                return Err(Error::InvalidAxes(format!(
                    "axis {a} out of range for {} axes",
                    self.ndim()
                )));
            }
            if axes[..k].contains(&a) {
                return Err(Error::InvalidAxes(format!("axis {a} repeated")));
            }
        }
        Ok(())
    }

    /// Marginal over `axes`, with axes kept in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Result<Self> {
        self.check_axes(axes)?;
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let names = axes.iter().map(|&a| self.names[a].clone()).collect();
        if axes.is_empty() {
            return Ok(Self {
                shape: vec![1],
                probs: vec![self.total_mass()],
                names: vec!["∅".into()],
            });
        }
        let mut out = vec![T::zero(); shape.iter().product()];
        let mut idx = vec![0usize; self.ndim()];
        for &p in &self.probs {
            let flat = axes
                .iter()
                .fold(0, |acc, &a| acc * self.shape[a] + idx[a]);
            out[flat] += p;
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < self.shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self {
            shape,
            probs: out,
            names,
        })
    }
}

fn shannon<T: Real>(probs: &[T]) -> T {
    probs
        .iter()
        .filter(|&&p| p > T::zero())
        .fold(T::zero(), |h, &p| h - p * p.ln())
}

fn disjoint(sets: &[&[usize]]) -> Result<()> {
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[..i] {
            if let Some(x) = a.iter().find(|x| b.contains(x)) {
                return Err(Error::InvalidAxes(format!("axis {x} appears in two groups")));
            }
        }
    }
    Ok(())
}

fn union(sets: &[&[usize]]) -> Vec<usize> {
    sets.iter().flat_map(|s| s.iter().copied()).collect()
}

/// Shannon entropy of the marginal on `axes`; `0·log 0 = 0`.
pub fn entropy<T: Real>(j: &DiscreteJoint<T>, axes: &[usize]) -> Result<T> {
    Ok(shannon(j.marginal(axes)?.probs()))
}

/// `H(T | G) = H(T, G) − H(G)`, summed as `−Σ p(t,g) log(p(t,g)/p(g))` so a
/// deterministic `T` given `G` yields exactly zero.
pub fn conditional_entropy<T: Real>(j: &DiscreteJoint<T>, target: &[usize], given: &[usize]) -> Result<T> {
    disjoint(&[target, given])?;
    let joint = j.marginal(&union(&[target, given]))?;
    let cond = j.marginal(given)?;
    let n_given = cond.probs.len();
    let mut h = T::zero();
    for (k, &p) in joint.probs.iter().enumerate() {
        if p > T::zero() {
            h -= p * (p / cond.probs[k % n_given]).ln();
        }
    }
    Ok(h)
}

/// `I(A; B) = H(A) + H(B) − H(A, B)`.
pub fn mutual_info<T: Real>(j: &DiscreteJoint<T>, a: &[usize], b: &[usize]) -> Result<T> {
    disjoint(&[a, b])?;
    Ok(entropy(j, a)? + entropy(j, b)? - entropy(j, &union(&[a, b]))?)
}

/// `I(A; B | C) = H(A | C) − H(A | B, C)`.
pub fn conditional_mutual_info<T: Real>(
    j: &DiscreteJoint<T>,
    a: &[usize],
    b: &[usize],
    given: &[usize],
) -> Result<T> {
    disjoint(&[a, b, given])?;
    Ok(conditional_entropy(j, a, given)? - conditional_entropy(j, a, &union(&[b, given]))?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityCheck<T> {
    pub lhs: T,
    pub rhs: T,
    pub gap: T,
}

impl<T: Real> IdentityCheck<T> {
    fn new(lhs: T, rhs: T) -> Self {
        Self {
            lhs,
            rhs,
            gap: (lhs - rhs).abs(),
        }
    }
}

fn require_arity<T: Real>(j: &DiscreteJoint<T>, n: usize) -> Result<()> {
    if j.ndim() != n {
        return Err(Error::InvalidAxes(format!(
            "expected a {n}-axis joint, got {} axes",
            j.ndim()
        )));
    }
    Ok(())
}

/// Superfluous information of a `(z, v1, v2)` joint two ways:
/// `lhs = I(z; v1 | v2)` summed from its definition, and
/// `rhs = H(z | v2) − H(z | v1, v2)` from entropies.
pub fn verify_superfluous_decomposition<T: Real>(j: &DiscreteJoint<T>) -> Result<IdentityCheck<T>> {
    require_arity(j, 3)?;
    let (nz, n1, n2) = (j.shape[0], j.shape[1], j.shape[2]);
    let p_v2 = j.marginal(&[2])?;
    let p_zv2 = j.marginal(&[0, 2])?;
    let p_v12 = j.marginal(&[1, 2])?;
    let mut lhs = T::zero();
    for z in 0..nz {
        for a in 0..n1 {
            for b in 0..n2 {
                let p = j.get(&[z, a, b]);
                if p > T::zero() {
                    let ratio = p * p_v2.get(&[b]) / (p_zv2.get(&[z, b]) * p_v12.get(&[a, b]));
                    lhs += p * ratio.ln();
                }
            }
        }
    }
    let rhs = conditional_entropy(j, &[0], &[2])? - conditional_entropy(j, &[0], &[1, 2])?;
    Ok(IdentityCheck::new(lhs, rhs))
}

/// `I(z; v)` of a two-axis joint, summed from its definition (`lhs`) and as
/// `H(z) − H(z | v)` (`rhs`).
pub fn verify_mi_decomposition<T: Real>(j: &DiscreteJoint<T>) -> Result<IdentityCheck<T>> {
    require_arity(j, 2)?;
    let pz = j.marginal(&[0])?;
    let pv = j.marginal(&[1])?;
    let mut lhs = T::zero();
    for z in 0..j.shape[0] {
        for v in 0..j.shape[1] {
            let p = j.get(&[z, v]);
            if p > T::zero() {
                lhs += p * (p / (pz.get(&[z]) * pv.get(&[v]))).ln();
            }
        }
    }
    let rhs = entropy(j, &[0])? - conditional_entropy(j, &[0], &[1])?;
    Ok(IdentityCheck::new(lhs, rhs))
}

/// Checks a conditional table `q[v2][z]` against a `(z, v2)` joint: rows sum
/// to one and `q > 0` wherever `p > 0`.
fn check_conditional<T: Real>(p: &DiscreteJoint<T>, q_cond: &Matrix<T>) -> Result<()> {
    require_arity(p, 2)?;
    let (nz, nv) = (p.shape[0], p.shape[1]);
    ensure_dim(nv, q_cond.rows())?;
    ensure_dim(nz, q_cond.cols())?;
    for v in 0..nv {
        let row = q_cond.row(v);
        if row.iter().any(|q| !(*q >= T::zero())) {
            return Err(Error::param("q_cond", format!("row {v} has a negative entry")));
        }
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > mass_tolerance() {
            return Err(Error::param("q_cond", format!("row {v} sums to {s}")));
        }
        for (z, &q) in row.iter().enumerate().take(nz) {
            if p.get(&[z, v]) > T::zero() && q == T::zero() {
                return Err(Error::SupportViolation(format!(
                    "q(z={z} | v2={v}) = 0 where p > 0"
                )));
            }
        }
    }
    Ok(())
}

/// `lhs = E_{p(v2)} KL(p(z|v2) ‖ q(z|v2))` and
/// `rhs = E_p[log p(z|v2)] − E_p[log q(z|v2)]`.
pub fn verify_kl_decomposition<T: Real>(p: &DiscreteJoint<T>, q_cond: &Matrix<T>) -> Result<IdentityCheck<T>> {
    check_conditional(p, q_cond)?;
    let (nz, nv) = (p.shape[0], p.shape[1]);
    let pv = p.marginal(&[1])?;
    let mut lhs = T::zero();
    let mut e_log_p = T::zero();
    let mut e_log_q = T::zero();
    for v in 0..nv {
        let w = pv.get(&[v]);
        if w <= T::zero() {
            continue;
        }
        let mut kl = T::zero();
        for z in 0..nz {
            let pzv = p.get(&[z, v]);
            if pzv > T::zero() {
                let cond = pzv / w;
                let q = q_cond[(v, z)];
                kl += cond * (cond / q).ln();
                e_log_p += pzv * cond.ln();
                e_log_q += pzv * q.ln();
            }
        }
        lhs += w * kl;
    }
    Ok(IdentityCheck::new(lhs, e_log_p - e_log_q))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariationalBound<T> {
    /// `H(z | v2)`
    pub cond_entropy: T,
    /// `−E_p[log q(z | v2)]`
    pub cross_entropy: T,
    /// The expected KL between `p(z|v2)` and `q`, which is the slack.
    pub kl: T,
}

impl<T: Real> VariationalBound<T> {
    pub fn holds(&self, tol: T) -> bool {
        self.cond_entropy <= self.cross_entropy + tol
    }
}

pub fn variational_bound_check<T: Real>(p: &DiscreteJoint<T>, q_cond: &Matrix<T>) -> Result<VariationalBound<T>> {
    let kl = verify_kl_decomposition(p, q_cond)?;
    let cond_entropy = conditional_entropy(p, &[0], &[1])?;
    let mut cross_entropy = T::zero();
    for v in 0..p.shape[1] {
        for z in 0..p.shape[0] {
            let pzv = p.get(&[z, v]);
            if pzv > T::zero() {
                cross_entropy -= pzv * q_cond[(v, z)].ln();
            }
        }
    }
    Ok(VariationalBound {
        cond_entropy,
        cross_entropy,
        kl: kl.lhs,
    })
}

/// The true conditional `p(z | v2)` of a `(z, v2)` joint as a `[v2][z]`
/// table. Rows with zero mass become uniform.
pub fn conditional_table<T: Real>(p: &DiscreteJoint<T>) -> Result<Matrix<T>> {
    require_arity(p, 2)?;
    let (nz, nv) = (p.shape[0], p.shape[1]);
    let pv = p.marginal(&[1])?;
    Ok(Matrix::from_fn(nv, nz, |v, z| {
        let w = pv.get(&[v]);
        if w > T::zero() {
            p.get(&[z, v]) / w
        } else {
            T::one() / T::from_usize_lossy(nz)
        }
    }))
}

/// Random full-support conditional table with `rows` conditions over `cols`
/// outcomes.
pub fn random_conditional<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    let mut m = Matrix::from_fn(rows, cols, |_, _| {
        let e: f64 = Exp1.sample(rng);
        T::lit(e)
    });
    for r in 0..rows {
        let row = m.row_mut(r);
        let s: T = row.iter().copied().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(shape: Vec<usize>) -> DiscreteJoint<f64> {
        let n: usize = shape.iter().product();
        DiscreteJoint::unnamed(shape, vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn construction_rejects_bad_tables() {
        assert!(DiscreteJoint::unnamed(vec![2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::unnamed(vec![2], vec![1.5, -0.5]).is_err());
        assert!(DiscreteJoint::unnamed(vec![3], vec![0.5, 0.5]).is_err());
        assert!(DiscreteJoint::<f64>::unnamed(vec![0], vec![]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let j = uniform(vec![4]);
        assert!((entropy(&j, &[0]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let point = DiscreteJoint::unnamed(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy(&point, &[0]).unwrap(), 0.0);
        assert!(entropy(&j, &[1]).is_err());
        assert!(entropy(&uniform(vec![2, 2]), &[0, 0]).is_err());
    }

    #[test]
    fn entropy_of_marginal_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = DiscreteJoint::<f64>::random(&mut rng, &[3, 3]).unwrap();
        let mut h = 0.0;
        for a in 0..3 {
            let m: f64 = (0..3).map(|b| j.get(&[a, b])).sum();
            h -= m * m.ln();
        }
        assert!((entropy(&j, &[0]).unwrap() - h).abs() < 1e-14);
    }

    #[test]
    fn marginal_preserves_mass_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = DiscreteJoint::<f64>::random(&mut rng, &[2, 3, 4]).unwrap();
        let m = j.marginal(&[2, 0]).unwrap();
        assert_eq!(m.shape(), &[4, 2]);
        assert!((m.total_mass() - 1.0).abs() < 1e-14);
        let direct: f64 = (0..3).map(|b| j.get(&[1, b, 3])).sum();
        assert!((m.get(&[3, 1]) - direct).abs() < 1e-15);
    }

    #[test]
    fn conditional_entropy_examples() {
        let j = uniform(vec![2, 3]);
        let h = conditional_entropy(&j, &[0], &[1]).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-15);
        // z = v copy channel
        let copy = DiscreteJoint::unnamed(vec![2, 2], vec![0.3, 0.0, 0.0, 0.7]).unwrap();
        assert!(conditional_entropy::<f64>(&copy, &[0], &[1]).unwrap().abs() < 1e-15);
        assert!(conditional_entropy(&copy, &[0], &[0]).is_err());
    }

    #[test]
    fn conditional_entropy_matches_definitional_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let j = DiscreteJoint::<f64>::random(&mut rng, &[3, 5]).unwrap();
        let mut h = 0.0;
        for g in 0..5 {
            let pg: f64 = (0..3).map(|t| j.get(&[t, g])).sum();
            let hg: f64 = (0..3)
                .map(|t| {
                    let c = j.get(&[t, g]) / pg;
                    -c * c.ln()
                })
                .sum();
            h += pg * hg;
        }
        assert!((conditional_entropy(&j, &[0], &[1]).unwrap() - h).abs() < 1e-14);
    }

    #[test]
    fn mutual_info_examples() {
        assert!(mutual_info(&uniform(vec![3, 4]), &[0], &[1]).unwrap().abs() < 1e-14);
        let copy = DiscreteJoint::unnamed(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!((mutual_info(&copy, &[0], &[1]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(mutual_info(&copy, &[0], &[0]).is_err());
        assert!(conditional_mutual_info(&uniform(vec![2, 2, 2]), &[0], &[1], &[1]).is_err());
    }

    #[test]
    fn mutual_info_matches_double_sums_on_4x4x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let j = DiscreteJoint::<f64>::random(&mut rng, &[4, 4, 4]).unwrap();
        // I(x0; x1,x2) by direct sum
        let pa = j.marginal(&[0]).unwrap();
        let pbc = j.marginal(&[1, 2]).unwrap();
        let mut direct = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let p = j.get(&[a, b, c]);
                    direct += p * (p / (pa.get(&[a]) * pbc.get(&[b, c]))).ln();
                }
            }
        }
        assert!((mutual_info(&j, &[0], &[1, 2]).unwrap() - direct).abs() < 1e-12);
        let cmi = conditional_mutual_info(&j, &[0], &[1], &[2]).unwrap();
        let check = verify_superfluous_decomposition(&j).unwrap();
        assert!((cmi - check.lhs).abs() < 1e-12);
    }

    #[test]
    fn superfluous_decomposition_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let j = DiscreteJoint::<f64>::random(&mut rng, &[3, 4, 5]).unwrap();
        assert!(verify_superfluous_decomposition(&j).unwrap().gap < 1e-12);

        // z independent of (v1, v2)
        let pz = [0.2, 0.8];
        let pv = DiscreteJoint::<f64>::random(&mut rng, &[3, 3]).unwrap();
        let probs = (0..2)
            .flat_map(|z| (0..9).map(move |k| (z, k)))
            .map(|(z, k)| pz[z] * pv.probs()[k])
            .collect();
        let ind = DiscreteJoint::unnamed(vec![2, 3, 3], probs).unwrap();
        let r = verify_superfluous_decomposition(&ind).unwrap();
        assert!(r.lhs.abs() < 1e-14 && r.rhs.abs() < 1e-14);

        // z = v1 mod 2: no randomness given (v1, v2)
        let pv = DiscreteJoint::<f64>::random(&mut rng, &[4, 3]).unwrap();
        let mut probs = vec![0.0; 2 * 4 * 3];
        for a in 0..4 {
            for b in 0..3 {
                probs[(a % 2) * 12 + a * 3 + b] = pv.get(&[a, b]);
            }
        }
        let det = DiscreteJoint::unnamed(vec![2, 4, 3], probs).unwrap();
        assert_eq!(conditional_entropy(&det, &[0], &[1, 2]).unwrap().abs(), 0.0);
        let r = verify_superfluous_decomposition(&det).unwrap();
        assert!((r.lhs - conditional_entropy(&det, &[0], &[2]).unwrap()).abs() < 1e-14);

        assert!(verify_superfluous_decomposition(&uniform(vec![2, 2])).is_err());
    }

    #[test]
    fn mi_decomposition_examples() {
        let r = verify_mi_decomposition(&uniform(vec![3, 2])).unwrap();
        assert!(r.lhs.abs() < 1e-15 && r.rhs.abs() < 1e-15);
        let mut probs = vec![0.0; 64];
        for i in 0..8 {
            probs[i * 8 + i] = 1.0 / 8.0;
        }
        let copy = DiscreteJoint::unnamed(vec![8, 8], probs).unwrap();
        let r = verify_mi_decomposition(&copy).unwrap();
        assert!((r.lhs - 8f64.ln()).abs() < 1e-14);
        assert!((r.rhs - 8f64.ln()).abs() < 1e-14);
        assert!(verify_mi_decomposition(&uniform(vec![2, 2, 2])).is_err());
    }

    #[test]
    fn kl_decomposition_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = DiscreteJoint::<f64>::random(&mut rng, &[4, 3]).unwrap();
        let q_true = conditional_table(&p).unwrap();
        let r = verify_kl_decomposition(&p, &q_true).unwrap();
        assert!(r.lhs.abs() < 1e-15 && r.rhs.abs() < 1e-14);

        let q = random_conditional(&mut rng, 3, 4);
        let r = verify_kl_decomposition(&p, &q).unwrap();
        assert!(r.gap < 1e-12 && r.lhs > 0.0);

        let mut bad = q.clone();
        bad.row_mut(1).copy_from_slice(&[0.0, 0.5, 0.25, 0.25]);
        assert!(matches!(
            verify_kl_decomposition(&p, &bad),
            Err(Error::SupportViolation(_))
        ));
        let mut unnormalized = q;
        unnormalized[(0, 0)] += 0.1;
        assert!(verify_kl_decomposition(&p, &unnormalized).is_err());
    }

    #[test]
    fn variational_bound_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = DiscreteJoint::<f64>::random(&mut rng, &[5, 3]).unwrap();
        let q_true = conditional_table(&p).unwrap();
        let eq = variational_bound_check(&p, &q_true).unwrap();
        assert!((eq.cond_entropy - eq.cross_entropy).abs() < 1e-14);

        let q = random_conditional(&mut rng, 3, 5);
        let r = variational_bound_check(&p, &q).unwrap();
        assert!(r.cond_entropy < r.cross_entropy);
        assert!((r.cross_entropy - r.cond_entropy - r.kl).abs() < 1e-12);

        let unif = Matrix::from_fn(3, 5, |_, _| 0.2);
        let r = variational_bound_check(&p, &unif).unwrap();
        assert!((r.cross_entropy - 5f64.ln()).abs() < 1e-14);
    }
}
