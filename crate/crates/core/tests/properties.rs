mod common;

use fedldp::adversarial::AttackConfig;
use fedldp::divergence::{DIVERGENCE_ZERO_TOL, LOSS_TOL};
use fedldp::metrics::{psi_from_predictions, PsiMeasurement};
use fedldp::model::mean_loss;
use fedldp::{
    aggregate_runs, classify_example, clip_l1, compute_alpha_thresholds, fedavg, fgsm, forward, hockey_stick,
    init_params, kl_divergence, laplace_perturb, max_privacy_loss, partition_iid, randomized_response_matrix, softmax,
    BandOracle, ClientUpdate, ClipSpec, DiscreteDistribution, LabeledBatch, PrivacyBudget, PrivacyLoss,
    ProbabilityVector, RobustnessReport, Tensor, VerdictKind,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn simplex_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|k| (simplex(k), simplex(k)))
}

fn pv(v: &[f64]) -> ProbabilityVector {
    ProbabilityVector::new(v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let p = softmax(&z).unwrap();
        let s: f64 = p.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(p.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal((p, q) in simplex_pair()) {
        let (p, q) = (pv(&p), pv(&q));
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn randomized_response_rows_and_tightness(k in 2usize..=10, eps in 0.01f64..=10.0) {
        let m = randomized_response_matrix(k, PrivacyBudget::Finite(eps)).unwrap();
        for row in m.rows() {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        match max_privacy_loss(&m).unwrap() {
            PrivacyLoss::Bounded(l) => prop_assert!((l - eps).abs() < 1e-12, "{l} vs {eps}"),
            PrivacyLoss::Unbounded => prop_assert!(false, "unbounded loss"),
        }
    }

    #[test]
    fn clip_is_bounded_and_a_nonnegative_scaling(v in prop::collection::vec(-50f64..50.0, 1..40), s in 0.01f64..10.0) {
        let out = clip_l1(&v, &ClipSpec::l1(s).unwrap());
        prop_assert!(out.iter().map(|x| x.abs()).sum::<f64>() <= s + 1e-12);
        let norm: f64 = v.iter().map(|x| x.abs()).sum();
        let c = if norm > s { s / norm } else { 1.0 };
        for (o, x) in out.iter().zip(&v) {
            prop_assert!((o - c * x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn laplace_with_infinite_budget_is_identity(v in prop::collection::vec(-5f64..5.0, 0..20), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(laplace_perturb(&v, 1.0, PrivacyBudget::Infinite, &mut rng).unwrap(), v);
    }

    #[test]
    fn hockey_stick_is_nonincreasing_in_lambda((p, q) in simplex_pair(), a in 1f64..5.0, b in 1f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (p, q) = (DiscreteDistribution::new(p).unwrap(), DiscreteDistribution::new(q).unwrap());
        prop_assert!(hockey_stick(&p, &q, hi).unwrap() <= hockey_stick(&p, &q, lo).unwrap() + 1e-15);
    }

    #[test]
    fn hockey_stick_at_one_is_total_variation((p, q) in simplex_pair()) {
        let tv = common::total_variation(&p, &q);
        let e1 = hockey_stick(&DiscreteDistribution::new(p).unwrap(), &DiscreteDistribution::new(q).unwrap(), 1.0).unwrap();
        prop_assert!((e1 - tv).abs() < 1e-12);
    }

    #[test]
    fn hockey_stick_vanishes_iff_ratio_is_bounded((p, q) in simplex_pair(), lambda in 1f64..4.0) {
        let ratio = p.iter().zip(&q).map(|(a, b)| a / b).fold(0.0, f64::max);
        let e = hockey_stick(&DiscreteDistribution::new(p).unwrap(), &DiscreteDistribution::new(q).unwrap(), lambda).unwrap();
        // Skip the sliver where the two tolerances could legitimately differ.
        prop_assume!((ratio - lambda).abs() > 1e-6);
        prop_assert_eq!(e <= DIVERGENCE_ZERO_TOL, ratio <= lambda + LOSS_TOL);
    }

    #[test]
    fn fedavg_is_linear_and_order_free(
        deltas in prop::collection::vec(prop::collection::vec(-3f64..3.0, 5), 1..6),
        weights in prop::collection::vec(1f64..100.0, 6),
        c in -4f64..4.0,
    ) {
        let ups: Vec<ClientUpdate> = deltas.iter().zip(&weights).map(|(d, &w)| ClientUpdate { delta: d.clone(), weight: w }).collect();
        let base = fedavg(&ups).unwrap();
        let scaled: Vec<ClientUpdate> = ups.iter().map(|u| ClientUpdate { delta: u.delta.iter().map(|x| c * x).collect(), weight: u.weight }).collect();
        for (a, b) in fedavg(&scaled).unwrap().iter().zip(&base) {
            prop_assert!((a - c * b).abs() < 1e-12);
        }
        let mut rev = ups.clone();
        rev.reverse();
        for (a, b) in fedavg(&rev).unwrap().iter().zip(&base) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_is_disjoint_exhaustive_and_balanced(n in 1usize..120, k in 1usize..20, seed: u64) {
        prop_assume!(k <= n);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        let batch = LabeledBatch::new(Tensor::from_rows(&rows).unwrap(), vec![0; n]).unwrap();
        let shards = partition_iid(&batch, k, seed).unwrap();
        prop_assert_eq!(shards.len(), k);
        let sizes: Vec<usize> = shards.iter().map(|s| s.data.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut seen: Vec<u64> = shards.iter().flat_map(|s| s.data.inputs().data().iter().map(|x| (x * n as f64).round() as u64).collect::<Vec<_>>()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n as u64).collect::<Vec<_>>());
    }

    #[test]
    fn psi_is_antitone_and_batch_order_free(
        rows in prop::collection::vec((simplex(4), simplex(4)), 1..10),
        extra in simplex(4),
    ) {
        let clean: Vec<ProbabilityVector> = rows.iter().map(|r| pv(&r.0)).collect();
        let adv: Vec<ProbabilityVector> = rows.iter().map(|r| pv(&r.1)).collect();
        let (kl, psi) = psi_from_predictions(&clean, &adv).unwrap();
        let (rkl, _) = psi_from_predictions(
            &clean.iter().rev().cloned().collect::<Vec<_>>(),
            &adv.iter().rev().cloned().collect::<Vec<_>>(),
        ).unwrap();
        prop_assert!((kl - rkl).abs() <= 1e-12 * kl.max(1.0));
        // Moving one adversarial row further away cannot increase psi.
        let mut far = adv.clone();
        let target = pv(&extra);
        if kl_divergence(&clean[0], &target).unwrap() > kl_divergence(&clean[0], &adv[0]).unwrap() {
            far[0] = target;
            let (kl2, psi2) = psi_from_predictions(&clean, &far).unwrap();
            prop_assert!(kl2 >= kl && psi2 <= psi);
        }
    }

    #[test]
    fn aggregate_ignores_report_order(psis in prop::collection::vec(0.1f64..10.0, 2..8), seed: u64) {
        let reports: Vec<RobustnessReport> = psis.iter().enumerate().map(|(i, &p)| RobustnessReport {
            epsilon: if i % 2 == 0 { PrivacyBudget::Finite(1.0) } else { PrivacyBudget::Infinite },
            seed: seed.wrapping_add(i as u64),
            measurement: PsiMeasurement { alpha: 0.1, psi: p, mean_kl: 1.0 / p, clean_accuracy: 0.5, adversarial_accuracy: 0.1 },
        }).collect();
        let a = aggregate_runs(&reports).unwrap();
        let mut rev = reports.clone();
        rev.reverse();
        let b = aggregate_runs(&rev).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.epsilon, y.epsilon);
            prop_assert!((x.mean.psi - y.mean.psi).abs() < 1e-12);
            prop_assert!((x.std.psi - y.std.psi).abs() < 1e-12);
        }
    }

    #[test]
    fn fgsm_respects_budget_and_domain(seed: u64, alpha in 0f64..0.5) {
        let (params, x, y) = common::random_case(seed);
        let cfg = AttackConfig::linf(alpha).unwrap();
        let adv = fgsm(&params, &x[0], y[0], &cfg).unwrap();
        for (a, b) in adv.iter().zip(&x[0]) {
            prop_assert!((a - b).abs() <= alpha + 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn verdict_is_invariant_to_logit_scaling(
        w in prop::collection::vec(-1f64..1.0, 4),
        x in prop::collection::vec(-1f64..1.0, 2),
        xs in prop::collection::vec(-1f64..1.0, 2),
        scale in 0.01f64..100.0,
        alpha in 0f64..2.0,
    ) {
        let logits = |v: &[f64], s: f64| [s * (w[0] * v[0] + w[1] * v[1]), s * (w[2] * v[0] + w[3] * v[1])];
        let f1 = |v: &[f64]| usize::from(logits(v, 1.0)[1] > logits(v, 1.0)[0]);
        let fs = |v: &[f64]| usize::from(logits(v, scale)[1] > logits(v, scale)[0]);
        let oracle = BandOracle::default();
        let cfg = AttackConfig::linf(alpha).unwrap();
        let a = classify_example(&f1, &oracle, &x, &xs, &cfg);
        let b = classify_example(&fs, &oracle, &x, &xs, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn alpha1_exceeds_alpha2_by_at_most_one_step(x0 in -1f64..1.0, x1 in -1f64..1.0, step in prop::sample::select(vec![0.05, 0.1, 0.2])) {
        let oracle = BandOracle::default();
        prop_assume!(x0.abs() > 0.06);
        let y = if x0 > 0.0 { BandOracle::POSITIVE } else { BandOracle::NEGATIVE };
        let t = compute_alpha_thresholds(&oracle, &[x0, x1], y, &BandOracle::domain(), step).unwrap();
        if let (Some(a1), Some(a2)) = (t.alpha1, t.alpha2) {
            prop_assert!(a1 <= a2 + step + 1e-12, "{a1} vs {a2}");
        }
    }
}

#[test]
fn kl_is_asymmetric() {
    let p = pv(&[0.9, 0.1]);
    let q = pv(&[0.5, 0.5]);
    let fwd = kl_divergence(&p, &q).unwrap();
    let rev = kl_divergence(&q, &p).unwrap();
    assert!((fwd - rev).abs() > 1e-3, "{fwd} vs {rev}");
}

#[test]
fn alpha1_can_exceed_alpha2_near_the_domain_edge() {
    // Same-side points are at most 1.0 away, the first violating grid point 1.01.
    let t = compute_alpha_thresholds(
        &BandOracle::default(),
        &[-0.95, 0.0],
        BandOracle::NEGATIVE,
        &BandOracle::domain(),
        0.01,
    )
    .unwrap();
    assert!((t.alpha1.unwrap() - 1.01).abs() < 1e-12 && (t.alpha2.unwrap() - 1.0).abs() < 1e-12, "{t:?}");
}

#[test]
fn threshold_refinement_is_monotone_and_converges() {
    let oracle = BandOracle::default();
    let x = [-0.5, 0.0];
    let mut prev: Option<(f64, f64)> = None;
    let mut alpha1s = Vec::new();
    for step in [0.04, 0.02, 0.01] {
        let t = compute_alpha_thresholds(&oracle, &x, BandOracle::NEGATIVE, &BandOracle::domain(), step).unwrap();
        let (a1, a2) = (t.alpha1.unwrap(), t.alpha2.unwrap());
        if let Some((p1, p2)) = prev {
            assert!(a1 <= p1 + 1e-12 && a2 >= p2 - 1e-12);
        }
        prev = Some((a1, a2));
        alpha1s.push(a1);
    }
    for (got, want) in alpha1s.iter().zip([0.58, 0.56, 0.56]) {
        assert!((got - want).abs() < 1e-12, "{alpha1s:?}");
    }
    // Analytic distance to the far side of the band is 0.55.
    for (a1, step) in alpha1s.iter().zip([0.04, 0.02, 0.01]) {
        assert!(*a1 >= 0.55 && a1 - 0.55 <= step + 1e-12);
    }
}

#[test]
fn forward_is_bitwise_deterministic_and_loss_is_order_free() {
    let params = init_params(&[6, 5, 3], 9).unwrap();
    let rows: Vec<Vec<f64>> = (0..7).map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect()).collect();
    let t = Tensor::from_rows(&rows).unwrap();
    let (p1, _) = forward(&params, &t).unwrap();
    let (p2, _) = forward(&params, &t).unwrap();
    assert_eq!(p1, p2);
    let labels = vec![0, 1, 2, 0, 1, 2, 0];
    let batch = LabeledBatch::new(t, labels.clone()).unwrap();
    let order = [6, 2, 4, 0, 1, 5, 3];
    let shuffled = batch.select(&order);
    let a = mean_loss(&params, &batch).unwrap();
    let b = mean_loss(&params, &shuffled).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!((common::naive_loss(&params, &rows, &labels).0 - a).abs() < 1e-12);
}

#[test]
fn unlabelable_candidates_are_never_adversarial() {
    let f = |_: &[f64]| BandOracle::POSITIVE;
    let cfg = AttackConfig::linf(1.0).unwrap();
    let v = classify_example(&f, &BandOracle::default(), &[0.5, 0.0], &[0.0, 0.3], &cfg).unwrap();
    assert_ne!(v.kind, VerdictKind::Sensitivity);
    assert_ne!(v.kind, VerdictKind::Invariance);
}
