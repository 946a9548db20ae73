//! Release-gate property suite.
//!
//! Runs a quick version of every cross-module invariant and reports each as
//! observed value vs bound. Parameter errors raised by a check (for example a
//! zero ridge) are collected separately as configuration problems so callers
//! can tell "the library is wrong" from "the request was invalid".

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{generate, GenConfig, ViewPairBatch};
use crate::encoder::{finite_difference_check, load_checkpoint, save_checkpoint, EncoderModel};
use crate::entropy::{entropy_grad_check, CheckScore, GradCheckConfig, SampleScheme};
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelFamily, KernelSpec};
use crate::linalg::Matrix;
use crate::losses::mveb_loss_grad;
use crate::oracle::{
    conditional_entropy, conditional_mutual_info, entropy, mutual_info, random_conditional,
    variational_bound_check, verify_kl_decomposition, verify_mi_decomposition,
    verify_superfluous_decomposition, DiscreteJoint,
};
use crate::sphere::{log_surface_area, uniform_batch, Embedding, VmfDistribution};
use crate::stein::{score_error, stein_estimate, ScoreMatrix, SteinConfig, DEFAULT_RIDGE};
use crate::train::{train, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// Negate every score before use. A mutation fixture: score-dependent
    /// checks must fail under it.
    pub flip_score_sign: bool,
    /// Ridge used by the Stein checks instead of the default.
    pub ridge_override: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// pass iff observed < bound
    Below,
    /// pass iff observed ≤ bound
    AtMost,
    /// pass iff observed > bound
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub module: &'static str,
    pub property: &'static str,
    pub observed: f64,
    pub bound: f64,
    pub comparison: Comparison,
    pub pass: bool,
    /// Set when the check errored instead of producing a number.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub module: &'static str,
    pub property: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
    pub config_errors: Vec<ConfigIssue>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.config_errors.is_empty() && self.results.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.results.iter().filter(|r| !r.pass)
    }

    /// 0 when everything passed, 2 on any configuration error, else 1.
    pub fn exit_code(&self) -> i32 {
        if !self.config_errors.is_empty() {
            2
        } else if self.results.iter().all(|r| r.pass) {
            0
        } else {
            1
        }
    }
}

struct Suite {
    report: VerifyReport,
}

impl Suite {
    fn check(
        &mut self,
        module: &'static str,
        property: &'static str,
        bound: f64,
        comparison: Comparison,
        f: impl FnOnce() -> Result<f64>,
    ) {
        match f() {
            Ok(observed) => {
                let pass = match comparison {
                    Comparison::Below => observed < bound,
                    Comparison::AtMost => observed <= bound,
                    Comparison::Above => observed > bound,
                };
                self.report.results.push(PropertyResult {
                    module,
                    property,
                    observed,
                    bound,
                    comparison,
                    pass,
                    error: None,
                });
            }
            Err(e @ Error::InvalidParameter { .. }) => self.report.config_errors.push(ConfigIssue {
                module,
                property,
                message: e.to_string(),
            }),
            Err(e) => self.report.results.push(PropertyResult {
                module,
                property,
                observed: f64::NAN,
                bound,
                comparison,
                pass: false,
                error: Some(e.to_string()),
            }),
        }
    }
}

fn random_shape<R: Rng>(rng: &mut R, axes: usize) -> Vec<usize> {
    (0..axes).map(|_| rng.random_range(2..=8)).collect()
}

/// Maximum of `|f − g|` over entries, where `g` is a central finite-difference
/// gradient of `f`'s scalar.
fn fd_max_error(
    z: &Matrix<f64>,
    analytic: &Matrix<f64>,
    mut value: impl FnMut(&Matrix<f64>) -> Result<f64>,
) -> Result<f64> {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut zp = z.clone();
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            zp[(i, j)] = z[(i, j)] + h;
            let up = value(&zp)?;
            zp[(i, j)] = z[(i, j)] - h;
            let down = value(&zp)?;
            zp[(i, j)] = z[(i, j)];
            worst = worst.max((analytic[(i, j)] - (up - down) / (2.0 * h)).abs());
        }
    }
    Ok(worst)
}

pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let mut s = Suite {
        report: VerifyReport::default(),
    };
    let seed = opts.seed;
    let ridge = opts.ridge_override.unwrap_or(DEFAULT_RIDGE);
    let sign = if opts.flip_score_sign { -1.0 } else { 1.0 };
    use Comparison::*;

    // ---- info_oracle
    s.check("info_oracle", "superfluous-information identity gap (200 joints)", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let shape = random_shape(&mut rng, 3);
            worst = worst.max(verify_superfluous_decomposition(&DiscreteJoint::<f64>::random(&mut rng, &shape)?)?.gap);
        }
        Ok(worst)
    });
    s.check("info_oracle", "mutual-information identity gap (200 joints)", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let shape = random_shape(&mut rng, 2);
            worst = worst.max(verify_mi_decomposition(&DiscreteJoint::<f64>::random(&mut rng, &shape)?)?.gap);
        }
        Ok(worst)
    });
    s.check("info_oracle", "KL decomposition gap (100 pairs)", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let shape = random_shape(&mut rng, 2);
            let p = DiscreteJoint::<f64>::random(&mut rng, &shape)?;
            let q = random_conditional(&mut rng, shape[1], shape[0]);
            worst = worst.max(verify_kl_decomposition(&p, &q)?.gap);
        }
        Ok(worst)
    });
    s.check("info_oracle", "variational bound violation H(z|v2) − CE", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..100 {
            let shape = random_shape(&mut rng, 2);
            let p = DiscreteJoint::<f64>::random(&mut rng, &shape)?;
            let q = random_conditional(&mut rng, shape[1], shape[0]);
            let b = variational_bound_check(&p, &q)?;
            worst = worst.max(b.cond_entropy - b.cross_entropy);
        }
        Ok(worst)
    });
    s.check("info_oracle", "most negative entropy/MI/CMI/KL", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..100 {
            let shape = random_shape(&mut rng, 3);
            let j = DiscreteJoint::<f64>::random(&mut rng, &shape)?;
            let p2 = j.marginal(&[0, 2])?;
            let q = random_conditional(&mut rng, shape[2], shape[0]);
            for v in [
                entropy(&j, &[0, 1, 2])?,
                conditional_entropy(&j, &[0], &[1, 2])?,
                mutual_info(&j, &[0], &[1])?,
                conditional_mutual_info(&j, &[0], &[1], &[2])?,
                verify_kl_decomposition(&p2, &q)?.lhs,
            ] {
                worst = worst.max(-v);
            }
        }
        Ok(worst)
    });
    s.check("info_oracle", "chain rule H(A,B) − H(A) − H(B|A)", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 5);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let shape = random_shape(&mut rng, 2);
            let j = DiscreteJoint::<f64>::random(&mut rng, &shape)?;
            // H(B|A) summed per condition
            let pa = j.marginal(&[0])?;
            let mut hb_a = 0.0;
            for a in 0..shape[0] {
                let w = pa.get(&[a]);
                for b in 0..shape[1] {
                    let c = j.get(&[a, b]) / w;
                    hb_a -= w * c * c.ln();
                }
            }
            worst = worst.max((entropy(&j, &[0, 1])? - entropy(&j, &[0])? - hb_a).abs());
        }
        Ok(worst)
    });
    s.check("info_oracle", "H(z|v1,v2) for a deterministic encoder", 0.0, AtMost, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 6);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let shape = random_shape(&mut rng, 3);
            let pv = DiscreteJoint::<f64>::random(&mut rng, &shape[1..])?;
            let map: Vec<usize> = (0..shape[1] * shape[2]).map(|_| rng.random_range(0..shape[0])).collect();
            let mut probs = vec![0.0; shape.iter().product()];
            for (k, &z) in map.iter().enumerate() {
                probs[z * shape[1] * shape[2] + k] = pv.probs()[k];
            }
            let j = DiscreteJoint::unnamed(shape, probs)?;
            worst = worst.max(conditional_entropy(&j, &[0], &[1, 2])?.abs());
        }
        Ok(worst)
    });

    // ---- sphere_vmf
    s.check("sphere_vmf", "κ=0 log density vs −log surface area", 1e-12, Below, || {
        let mut worst: f64 = 0.0;
        for d in 2..=12 {
            let u = VmfDistribution::<f64>::uniform(d)?;
            let z = Embedding::basis(d, d - 1)?;
            worst = worst.max((u.log_density(z.coords())? + log_surface_area::<f64>(d)?).abs());
        }
        Ok(worst)
    });
    s.check("sphere_vmf", "sample mean resultant length error (d=3, κ=5)", 0.01, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let vmf = VmfDistribution::new(Embedding::basis(3, 0)?, 5.0)?;
        let xs = vmf.sample(&mut rng, 20_000)?;
        let mean: f64 = xs.iter().map(|x| x.coords()[0]).sum::<f64>() / xs.len() as f64;
        Ok((mean - vmf.mean_resultant_length()).abs())
    });

    // ---- kernels
    s.check("kernels", "Gram asymmetry and relative diagonal error (vMF)", 1e-12, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 8);
        let z: Matrix<f64> = uniform_batch(&mut rng, 64, 8);
        let g = gram(&z, &KernelSpec::median(KernelFamily::Vmf))?;
        let k = &g.values;
        let diag = (1.0 / g.resolved_bandwidth).exp();
        let mut worst: f64 = 0.0;
        for i in 0..64 {
            worst = worst.max((k[(i, i)] / diag - 1.0).abs());
            for j in 0..i {
                worst = worst.max((k[(i, j)] - k[(j, i)]).abs());
            }
        }
        Ok(worst)
    });

    // ---- stein_score
    s.check("stein_score", "mean cosine to N(0,I) score (d=8, M=512)", 0.9, Above, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 9);
        let x = Matrix::from_fn(512, 8, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let cfg = SteinConfig::new(KernelSpec::median(KernelFamily::Rbf), ridge);
        let est = stein_estimate(&x, &cfg)?.scaled(sign);
        Ok(score_error(&est.values, &x.scale(-1.0))?.mean_cosine)
    });

    // ---- entropy_grad
    let grad_check = |score: CheckScore, samples: usize, scheme: SampleScheme, rng_seed: u64| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut cfg = GradCheckConfig::new(Matrix::<f64>::identity(4), samples, score);
        cfg.scheme = scheme;
        cfg.flip_score_sign = opts.flip_score_sign;
        cfg.stein.ridge_eta = ridge;
        Ok(entropy_grad_check(&cfg, &mut rng)?.relative_error)
    };
    s.check("entropy_grad", "relative error, analytic scores (M=4096)", 1e-3, Below, || {
        grad_check(CheckScore::Analytic, 4096, SampleScheme::MomentMatched, seed + 10)
    });
    s.check("entropy_grad", "relative error, Stein scores (M=2048)", 0.05, AtMost, || {
        grad_check(CheckScore::Stein, 2048, SampleScheme::Iid, seed + 11)
    });

    // ---- losses
    s.check("losses", "MVEB embedding-gradient finite-difference error", 1e-7, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 12);
        let z1: Matrix<f64> = uniform_batch(&mut rng, 6, 3);
        let z2: Matrix<f64> = uniform_batch(&mut rng, 6, 3);
        let s1 = ScoreMatrix::analytic(uniform_batch(&mut rng, 6, 3).scale(sign));
        let s2 = ScoreMatrix::analytic(uniform_batch(&mut rng, 6, 3));
        let beta = 0.3;
        let (_, g) = mveb_loss_grad(&z1, &z2, &s1, &s2, beta)?;
        let e1 = fd_max_error(&z1, &g.z1, |z| Ok(mveb_loss_grad(z, &z2, &s1, &s2, beta)?.0.total))?;
        let e2 = fd_max_error(&z2, &g.z2, |z| Ok(mveb_loss_grad(&z1, z, &s1, &s2, beta)?.0.total))?;
        Ok(e1.max(e2))
    });

    // ---- encoder
    s.check("encoder", "finite-difference relative error (all parameters)", 1e-4, Below, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 13);
        let model = EncoderModel::<f64>::new_random(32, &[64, 64], 16, &mut rng)?;
        let v = Matrix::from_fn(8, 32, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let up = Matrix::from_fn(8, 16, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        Ok(finite_difference_check(&model, &v, &up, 1e-5, 1e-6)?.max_relative_error)
    });
    s.check("encoder", "checkpoint round-trip mismatches", 0.0, AtMost, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 14);
        let model = EncoderModel::<f64>::new_random(5, &[7], 3, &mut rng)?;
        let mut buf = Vec::new();
        save_checkpoint(&model, &mut buf)?;
        let back: EncoderModel<f64> = load_checkpoint(&buf[..])?;
        Ok(back
            .params_flat()
            .iter()
            .zip(model.params_flat())
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count() as f64)
    });

    // ---- synth_data
    s.check("synth_data", "generation mismatches for a repeated seed", 0.0, AtMost, || {
        let cfg = GenConfig { seed, ..GenConfig::default() };
        let a: ViewPairBatch<f64> = generate(&cfg, 128)?;
        let b: ViewPairBatch<f64> = generate(&cfg, 128)?;
        Ok(if a == b { 0.0 } else { 1.0 })
    });

    // ---- harness_cli
    s.check("harness_cli", "metrics-stream mismatches across repeated runs", 0.0, AtMost, || {
        let mut cfg = TrainConfig {
            batch_size: 64,
            steps: 20,
            hidden: vec![16],
            output_dim: 8,
            log_every: 5,
            eval_size: 128,
            seed,
            ..TrainConfig::default()
        };
        cfg.stein.ridge_eta = ridge;
        let a = train(&cfg)?;
        let b = train(&cfg)?;
        let lines = |o: &crate::train::TrainOutcome| o.records.iter().map(|r| r.to_json_line()).collect::<Vec<_>>();
        if a.records.iter().any(|r| !r.total.is_finite()) {
            return Err(Error::NumericalFailure {
                step: 0,
                what: "non-finite loss".into(),
            });
        }
        Ok(lines(&a).iter().zip(lines(&b)).filter(|(x, y)| **x != *y).count() as f64)
    });

    s.report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let r = verify_suite(&VerifyOptions::default());
        for f in r.failures() {
            eprintln!("{f:?}");
        }
        assert!(r.all_passed(), "{:?}", r.config_errors);
        assert_eq!(r.exit_code(), 0);
    }

    #[test]
    fn flipped_scores_fail_the_gradient_check() {
        let r = verify_suite(&VerifyOptions {
            flip_score_sign: true,
            ..VerifyOptions::default()
        });
        assert_eq!(r.exit_code(), 1);
        let analytic = r
            .results
            .iter()
            .find(|x| x.property.starts_with("relative error, analytic"))
            .unwrap();
        assert!(!analytic.pass && analytic.observed > analytic.bound);
    }

    #[test]
    fn zero_ridge_is_a_config_error() {
        let r = verify_suite(&VerifyOptions {
            ridge_override: Some(0.0),
            ..VerifyOptions::default()
        });
        assert_eq!(r.exit_code(), 2);
        assert!(r.config_errors.iter().any(|c| c.module == "stein_score"));
    }
}
