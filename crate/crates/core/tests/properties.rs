use mveb::data::{embedding_spread, read_dataset, uniformity_metric, write_dataset, GenConfig, ViewGenerator, ViewPairBatch};
use mveb::encoder::{finite_difference_check, load_checkpoint, save_checkpoint, EncoderModel, MomentumSchedule, TargetBranch};
use mveb::kernels::{gram, median_bandwidth, KernelFamily, KernelSpec};
use mveb::losses::{infonce_loss, mveb_loss};
use mveb::oracle::{
    conditional_entropy, conditional_mutual_info, entropy, mutual_info, random_conditional, variational_bound_check,
    verify_kl_decomposition, verify_mi_decomposition, verify_superfluous_decomposition, DiscreteJoint,
};
use mveb::sphere::{normalize, normalize_rows, uniform_batch};
use mveb::stein::{stein_estimate, ScoreMatrix, SteinConfig};
use mveb::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random orthogonal matrix from Gram-Schmidt on a seeded Gaussian matrix.
fn rotation(seed: u64, d: usize) -> Matrix<f64> {
    use rand::Rng;
    let mut r = rng(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.sample(rand_distr::StandardNormal)).collect();
        for u in &q {
            let c: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    Matrix::from_rows(&q).unwrap()
}

fn permute_rows(x: &Matrix<f64>, perm: &[usize]) -> Matrix<f64> {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(perm[i], j)])
}

fn shape3() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..=6, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn information_identities_hold(seed in any::<u64>(), shape in shape3()) {
        let j = DiscreteJoint::<f64>::random(&mut rng(seed), &shape).unwrap();
        prop_assert!(verify_superfluous_decomposition(&j).unwrap().gap < 1e-12);
        let pair = j.marginal(&[0, 1]).unwrap();
        prop_assert!(verify_mi_decomposition(&pair).unwrap().gap < 1e-12);
    }

    #[test]
    fn information_quantities_are_nonnegative(seed in any::<u64>(), shape in shape3()) {
        let mut r = rng(seed);
        let j = DiscreteJoint::<f64>::random(&mut r, &shape).unwrap();
        prop_assert!(entropy(&j, &[0, 1, 2]).unwrap() >= 0.0);
        prop_assert!(conditional_entropy(&j, &[0], &[1, 2]).unwrap() >= -1e-12);
        prop_assert!(mutual_info(&j, &[0], &[1, 2]).unwrap() >= -1e-12);
        prop_assert!(conditional_mutual_info(&j, &[0], &[1], &[2]).unwrap() >= -1e-12);
        let p = j.marginal(&[0, 2]).unwrap();
        let q = random_conditional(&mut r, shape[2], shape[0]);
        let b = variational_bound_check(&p, &q).unwrap();
        prop_assert!(b.kl >= 0.0);
        prop_assert!(b.holds(1e-12));
        prop_assert!(verify_kl_decomposition(&p, &q).unwrap().gap < 1e-12);
    }

    #[test]
    fn entropy_chain_rule(seed in any::<u64>(), shape in shape3()) {
        let j = DiscreteJoint::<f64>::random(&mut rng(seed), &shape).unwrap();
        let lhs = entropy(&j, &[0, 1, 2]).unwrap();
        let rhs = entropy(&j, &[1, 2]).unwrap() + conditional_entropy(&j, &[0], &[1, 2]).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
        // conditioning reduces entropy
        prop_assert!(conditional_entropy(&j, &[0], &[1]).unwrap() <= entropy(&j, &[0]).unwrap() + 1e-12);
    }

    #[test]
    fn normalize_gives_unit_norm(x in prop::collection::vec(-1e3f64..1e3, 2..20)) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-12);
        let z = normalize(&x).unwrap();
        let n: f64 = z.coords().iter().map(|v| v * v).sum();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_and_bandwidth_are_rotation_and_permutation_invariant(
        seed in any::<u64>(), m in 3usize..24, d in 2usize..6, rbf in any::<bool>(),
    ) {
        let family = if rbf { KernelFamily::Rbf } else { KernelFamily::Vmf };
        let z: Matrix<f64> = uniform_batch(&mut rng(seed), m, d);
        let zr = z.matmul(&rotation(seed ^ 1, d)).unwrap();
        let perm: Vec<usize> = (0..m).rev().collect();
        let zp = permute_rows(&z, &perm);
        let spec = KernelSpec::median(family);
        let g = gram(&z, &spec).unwrap();
        let gr = gram(&zr, &spec).unwrap();
        let gp = gram(&zp, &spec).unwrap();
        let scale = g.values.frobenius_norm();
        prop_assert!(g.values.max_abs_diff(&gr.values) < 1e-9 * scale);
        prop_assert!(permute_rows(&permute_rows(&g.values, &perm).transpose(), &perm).max_abs_diff(&gp.values) < 1e-12 * scale);
        let bw = median_bandwidth(&z, 1e-3).unwrap();
        prop_assert!((bw - median_bandwidth(&zr, 1e-3).unwrap()).abs() < 1e-12);
        prop_assert!((bw - median_bandwidth(&zp, 1e-3).unwrap()).abs() == 0.0);
    }

    #[test]
    fn stein_scores_are_equivariant(seed in any::<u64>(), m in 8usize..32, d in 2usize..5, rbf in any::<bool>()) {
        let family = if rbf { KernelFamily::Rbf } else { KernelFamily::Vmf };
        let cfg = SteinConfig::new(KernelSpec::median(family), 0.1);
        let z: Matrix<f64> = uniform_batch(&mut rng(seed), m, d);
        let s = stein_estimate(&z, &cfg).unwrap().values;
        let scale = s.frobenius_norm().max(1.0);

        let r = rotation(seed ^ 2, d);
        let sr = stein_estimate(&z.matmul(&r).unwrap(), &cfg).unwrap().values;
        prop_assert!(s.matmul(&r).unwrap().max_abs_diff(&sr) < 1e-8 * scale);

        let perm: Vec<usize> = (0..m).map(|i| (i * 7 + 3) % m).collect();
        prop_assume!({ let mut p = perm.clone(); p.sort(); p.dedup(); p.len() == m });
        let sp = stein_estimate(&permute_rows(&z, &perm), &cfg).unwrap().values;
        prop_assert!(permute_rows(&s, &perm).max_abs_diff(&sp) < 1e-8 * scale);
    }

    #[test]
    fn f32_and_f64_stein_agree(seed in any::<u64>(), m in 8usize..32) {
        let cfg = SteinConfig::new(KernelSpec::median(KernelFamily::Vmf), 0.1);
        let z: Matrix<f64> = uniform_batch(&mut rng(seed), m, 3);
        let s64 = stein_estimate(&z, &cfg).unwrap().values;
        let s32 = stein_estimate(&z.cast::<f32>(), &cfg.cast::<f32>()).unwrap().values.cast::<f64>();
        prop_assert!(s64.max_abs_diff(&s32) < 1e-2 * s64.frobenius_norm().max(1.0));
    }

    #[test]
    fn losses_are_consistent(seed in any::<u64>(), m in 2usize..16, d in 2usize..6, beta in 0.0f64..1.0) {
        let mut r = rng(seed);
        let z1: Matrix<f64> = uniform_batch(&mut r, m, d);
        let z2: Matrix<f64> = uniform_batch(&mut r, m, d);
        prop_assert!(infonce_loss(&z1, &z2, 0.2).unwrap() >= 0.0);
        let s1 = ScoreMatrix::analytic(uniform_batch(&mut r, m, d));
        let s2 = ScoreMatrix::analytic(uniform_batch(&mut r, m, d));
        let t = mveb_loss(&z1, &z2, &s1, &s2, beta).unwrap();
        prop_assert!((t.total - t.reassemble()).abs() <= 1e-15 * t.total.abs().max(1.0));
    }

    #[test]
    fn embedding_metrics_have_the_right_sign(seed in any::<u64>(), m in 2usize..40, d in 2usize..8) {
        let z: Matrix<f64> = uniform_batch(&mut rng(seed), m, d);
        prop_assert!(uniformity_metric(&z).unwrap() <= 1e-12);
        prop_assert!(embedding_spread(&z).unwrap() >= 0.0);
        let one = Matrix::from_fn(m, d, |_, j| z[(0, j)]);
        prop_assert!(embedding_spread(&one).unwrap() < 1e-12);
    }

    #[test]
    fn ema_momentum_is_monotone_and_bounded(m0 in 0.0f64..1.0, total in 1usize..500) {
        let mut r = rng(0);
        let model = EncoderModel::<f64>::new_random(2, &[3], 2, &mut r).unwrap();
        let t = TargetBranch::new(&model, m0, MomentumSchedule::CosineIncrease).unwrap();
        let mut prev = t.momentum_at(0, total).unwrap();
        prop_assert!((prev - m0).abs() < 1e-12);
        for step in 1..=total {
            let m = t.momentum_at(step, total).unwrap();
            prop_assert!(m >= prev - 1e-15 && m <= 1.0 && m >= m0 - 1e-15);
            prev = m;
        }
        prop_assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 0..3)) {
        let model = EncoderModel::<f64>::new_random(4, &hidden, 3, &mut rng(seed)).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&model, &mut buf).unwrap();
        let back: EncoderModel<f64> = load_checkpoint(&buf[..]).unwrap();
        let (a, b) = (model.params_flat(), back.params_flat());
        prop_assert_eq!(a.len(), b.len());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut cut = buf.clone();
        cut.truncate(buf.len() - 1);
        prop_assert!(load_checkpoint::<f64, _>(&cut[..]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn encoder_gradients_match_finite_differences(
        seed in any::<u64>(),
        hidden in prop::collection::vec(2usize..6, 1..3),
        out in 2usize..5,
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let model = EncoderModel::<f64>::new_random(3, &hidden, out, &mut r).unwrap();
        let v = Matrix::from_fn(4, 3, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal));
        let up = Matrix::from_fn(4, out, |_, _| r.sample::<f64, _>(rand_distr::StandardNormal));
        // a narrow ReLU net can map a row to the zero vector, which has no
        // direction on the sphere
        prop_assume!(model.embed(&v).is_ok());
        let c = finite_difference_check(&model, &v, &up, 1e-5, 1e-6).unwrap();
        prop_assert!(c.max_relative_error < 1e-4, "{:?}", c);
        // embeddings live on the sphere
        let z = model.embed(&v).unwrap();
        prop_assert!(z.max_abs_diff(&normalize_rows(&z).unwrap()) < 1e-12);
    }

    #[test]
    fn dataset_round_trip_is_bitwise(seed in any::<u64>(), m in 1usize..50, classes in 2usize..6) {
        let cfg = GenConfig { seed, num_classes: classes, ..GenConfig::default() };
        let gen = ViewGenerator::new(&cfg).unwrap();
        let batch: ViewPairBatch<f64> = gen.sample(&mut rng(seed), m).unwrap();
        let mut buf = Vec::new();
        write_dataset(&batch, &cfg, &mut buf).unwrap();
        let (h, back) = read_dataset::<f64, _>(&buf[..]).unwrap();
        prop_assert_eq!((h.m, h.seed), (m, seed));
        prop_assert!(back == batch);
        prop_assert!(batch.labels.iter().all(|&l| l < classes));
    }
}
