use selective_credit::models::{predict, FnPredictor, Predictor, Threshold};
use selective_credit::selective::{labels_from_predictions, LabelVariant};
use selective_credit::synth::{rejection_weight, sample, true_rejection_rate, Scenario};
use selective_credit::training::{self, ModelKind, TrainConfig};

fn bump_probability(x: &[f64]) -> f64 {
    let d2 = (x[0] + 1.0).powi(2) + (x[1] + 1.0).powi(2);
    let z = 3.0 * x[0] + 3.0 * x[1] + 60.0 * (-d2 / (2.0 * 0.01)).exp();
    1.0 / (1.0 + (-z).exp())
}

fn in_box(x: &[f64]) -> bool {
    (-0.5..0.25).contains(&x[0]) && (-0.8..0.6).contains(&x[1])
}

#[test]
fn bump_probability_matches_hand_formula() {
    let s = Scenario::named("bump").unwrap();
    for x in [[-1.0, -1.0], [0.0, 0.0], [-0.9, -0.95], [0.7, -0.2]] {
        assert!((s.probability(&x) - bump_probability(&x)).abs() < 1e-14);
    }
}

#[test]
fn rejection_rate_matches_grid_quadrature() {
    let s = Scenario::named("bump").unwrap();
    // nn says default inside the box, lr never does: weight is p there
    let nn = FnPredictor::new(2, |x: &[f64]| if in_box(x) { 0.9 } else { 0.1 });
    let lr = FnPredictor::new(2, |_: &[f64]| 0.2);
    let est = true_rejection_rate(&s, &nn, &lr, Threshold::default(), 1_000_000, 5).unwrap();

    let m = 1000;
    let h = 2.0 / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h];
            if in_box(&x) {
                acc += bump_probability(&x);
            }
        }
    }
    let grid = acc / (m * m) as f64;
    assert!(
        (est.value - grid).abs() < 4.0 * est.standard_error + 1e-3,
        "mc {} +- {} vs grid {grid}",
        est.value,
        est.standard_error
    );
}

#[test]
fn swapped_models_reject_with_complement_weight() {
    let s = Scenario::named("bump").unwrap();
    let nn = FnPredictor::new(2, |_: &[f64]| 0.1);
    let lr = FnPredictor::new(2, |x: &[f64]| if in_box(x) { 0.9 } else { 0.1 });
    let est = true_rejection_rate(&s, &nn, &lr, Threshold::default(), 200_000, 6).unwrap();
    let area = 0.75 * 1.4 / 4.0;
    // 1 - p over the box; p is small there except near the bump
    assert!(est.value > 0.0 && est.value <= area + 4.0 * est.standard_error);
    assert_eq!(rejection_weight(0.3, 0, 1), 0.7);
    assert_eq!(rejection_weight(0.3, 1, 1), 0.0);
}

#[test]
fn logistic_fit_on_linear_scenario_tracks_bayes_rule() {
    let s = Scenario::named("linear").unwrap();
    let train = sample(&s, 100_000, 21).unwrap();
    let (lr, _) = training::train(ModelKind::Logistic, &train.dataset, &TrainConfig::default().with_seed(1)).unwrap();
    let test = sample(&s, 10_000, 22).unwrap();
    let tau = Threshold::default();
    let disagree = test
        .dataset
        .rows()
        .zip(&test.probabilities)
        .filter(|(x, &p)| predict(lr.forward_unchecked(x), tau) != predict(p, tau))
        .count();
    let share = disagree as f64 / test.dataset.n() as f64;
    assert!(share < 0.02, "disagreement {share}");
}

#[test]
fn sample_default_share_matches_mean_probability() {
    let s = Scenario::named("diminishing_marginal").unwrap();
    let smp = sample(&s, 100_000, 7).unwrap();
    let mean_p: f64 = smp.probabilities.iter().sum::<f64>() / smp.probabilities.len() as f64;
    let se = (mean_p * (1.0 - mean_p) / smp.probabilities.len() as f64).sqrt();
    assert!((smp.dataset.default_share() - mean_p).abs() < 4.0 * se);
    for (x, &p) in smp.dataset.rows().zip(&smp.probabilities).take(100) {
        assert_eq!(x[0], x[0].round());
        assert_eq!(s.probability(x), p);
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let s = Scenario::named("linear").unwrap();
    let a = sample(&s, 5000, 3).unwrap();
    let b = sample(&s, 5000, 3).unwrap();
    let c = sample(&s, 5000, 4).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.probabilities, b.probabilities);
    assert_ne!(a.dataset.features(), c.dataset.features());
}

#[test]
fn practical_rejections_are_subset_of_ideal() {
    let s = Scenario::named("bump").unwrap();
    let smp = sample(&s, 20_000, 8).unwrap();
    let nn: Vec<u8> = smp.dataset.rows().map(|x| u8::from(in_box(x))).collect();
    let lr = vec![0u8; nn.len()];
    let ideal = labels_from_predictions(&nn, &lr, smp.dataset.labels(), LabelVariant::Ideal).unwrap();
    let practical = labels_from_predictions(&nn, &lr, smp.dataset.labels(), LabelVariant::Practical).unwrap();
    for (a, b) in ideal.z.iter().zip(&practical.z) {
        assert!(*b == 1 || *a == 0);
    }
    assert!(practical.rejected_share() < ideal.rejected_share());
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_chunks_agree_bitwise() {
    use selective_credit::exec;
    let v: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 1e-9 * i as f64).collect();
    let f = |r: std::ops::Range<usize>| v[r].iter().map(|x| x.sin()).sum::<f64>();
    let a: f64 = exec::map_chunks_seq(v.len(), exec::CHUNK, f).into_iter().sum();
    let b: f64 = exec::map_chunks_par(v.len(), exec::CHUNK, f).into_iter().sum();
    assert_eq!(a.to_bits(), b.to_bits());
}
