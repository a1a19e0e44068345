use aet_core::data::{synth_shapes, Dataset};
use aet_core::diffcore::Tensor;
use aet_core::eval::{
    error_rate, extract_features, few_label_protocol, knn_classify, probe_train, FeatureBank, ProbeConfig, ProbeHead,
    DEFAULT_K,
};
use aet_core::nets::{DecoderHead, Model, NetConfig};
use aet_core::xform::{AffineSpec, TransformSpec};
use aet_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full sort of every bank row by (distance, row), then a vote counted
/// label by label.
fn brute_force(bank: &FeatureBank, q: &[f64], k: usize) -> usize {
    let mut all: Vec<(f64, usize)> = (0..bank.len())
        .map(|i| {
            let d2: f64 = bank.row(i).iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
            (d2.sqrt(), i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let near = &all[..k];
    let mut best: Option<(usize, f64, usize)> = None;
    for label in 0..bank.class_count {
        let hits: Vec<f64> = near.iter().filter(|(_, i)| bank.labels[*i] == label).map(|(d, _)| *d).collect();
        let (n, s) = (hits.len(), hits.iter().sum::<f64>());
        best = match best {
            Some((bn, bs, bl)) if bn > n || (bn == n && bs <= s) => Some((bn, bs, bl)),
            _ => Some((n, s, label)),
        };
    }
    best.unwrap().2
}

fn random_bank(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize, grid: bool) -> FeatureBank {
    // Integer grids force many exact distance ties.
    let data = (0..n * d).map(|_| if grid { rng.gen_range(0..3) as f64 } else { rng.gen_range(-1.0..1.0) }).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    FeatureBank::new(Tensor::new(&[n, d], data).unwrap(), labels, classes, "rand").unwrap()
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for inst in 0..50 {
        let n = rng.gen_range(20..=200);
        let d = rng.gen_range(1..6);
        let classes = rng.gen_range(2..6);
        let bank = random_bank(&mut rng, n, d, classes, inst % 2 == 0);
        let m = 20;
        let q: Vec<f64> = (0..m * d)
            .map(|_| if inst % 2 == 0 { rng.gen_range(0..3) as f64 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let queries = Tensor::new(&[m, d], q.clone()).unwrap();
        for k in DEFAULT_K {
            let got = knn_classify(&bank, &queries, k).unwrap();
            for (j, row) in q.chunks(d).enumerate() {
                assert_eq!(got[j], brute_force(&bank, row, k), "instance {inst}, k {k}, query {j}");
            }
        }
    }
}

#[test]
fn bank_points_classify_as_themselves() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = random_bank(&mut rng, 40, 3, 4, false);
    let pred = knn_classify(&bank, &bank.features, 1).unwrap();
    assert_eq!(pred, bank.labels);
}

fn clusters(rng: &mut ChaCha8Rng, per: usize, centers: &[[f64; 2]], spread: f64) -> FeatureBank {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, ctr) in centers.iter().enumerate() {
        for _ in 0..per {
            data.push(ctr[0] + rng.gen_range(-spread..spread));
            data.push(ctr[1] + rng.gen_range(-spread..spread));
            labels.push(c);
        }
    }
    FeatureBank::new(Tensor::new(&[labels.len(), 2], data).unwrap(), labels, centers.len(), "clusters").unwrap()
}

#[test]
fn separated_clusters_are_classified_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centers = [[0.0, 0.0], [100.0, 0.0]];
    let train = clusters(&mut rng, 20, &centers, 1.0);
    let test = clusters(&mut rng, 10, &centers, 1.0);
    for k in [1, 5, 10, 20] {
        let pred = knn_classify(&train, &test.features, k).unwrap();
        assert_eq!(error_rate(&pred, &test.labels), 0.0);
    }
}

#[test]
fn probes_separate_separable_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let centers = [[-3.0, 1.0], [3.0, -1.0]];
    let train = clusters(&mut rng, 50, &centers, 2.0);
    let test = clusters(&mut rng, 50, &centers, 2.0);
    let cfg = ProbeConfig::default();
    assert_eq!(probe_train(&train, &test, ProbeHead::Linear, &cfg).unwrap(), 0.0);
    assert_eq!(probe_train(&train, &test, ProbeHead::Nonlinear, &cfg).unwrap(), 0.0);
}

#[test]
fn nonlinear_probe_solves_xor() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let quads = |rng: &mut ChaCha8Rng| {
        let mut b = clusters(rng, 40, &[[-2.0, -2.0], [2.0, 2.0], [-2.0, 2.0], [2.0, -2.0]], 1.0);
        b.labels.iter_mut().for_each(|y| *y /= 2);
        b.class_count = 2;
        b
    };
    let (train, test) = (quads(&mut rng), quads(&mut rng));
    let cfg = ProbeConfig::default();
    assert!(probe_train(&train, &test, ProbeHead::Linear, &cfg).unwrap() > 0.2);
    assert_eq!(probe_train(&train, &test, ProbeHead::Nonlinear, &cfg).unwrap(), 0.0);
}

#[test]
fn permuted_labels_give_chance_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let classes = 4;
    let n = 1200;
    let data: Vec<f64> = (0..n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let all = FeatureBank::new(Tensor::new(&[n, 8], data).unwrap(), labels, classes, "noise").unwrap();
    let train = all.subset(&(0..600).collect::<Vec<_>>()).unwrap();
    let test = all.subset(&(600..n).collect::<Vec<_>>()).unwrap();
    let cfg = ProbeConfig { epochs: 20, ..ProbeConfig::default() };
    let err = probe_train(&train, &test, ProbeHead::Linear, &cfg).unwrap();
    assert!((err - 0.75).abs() <= 0.05, "error {err}");
}

#[test]
fn constant_features_predict_the_majority_class() {
    let n = 100;
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            if i < 70 {
                1
            } else if i < 90 {
                0
            } else {
                2
            }
        })
        .collect();
    let bank = FeatureBank::new(Tensor::full(&[n, 3], 0.5), labels, 3, "const").unwrap();
    let err = probe_train(&bank, &bank, ProbeHead::Nonlinear, &ProbeConfig::default()).unwrap();
    assert!((err - 0.3).abs() < 1e-12, "error {err}");
}

#[test]
fn degenerate_banks_are_rejected() {
    assert!(matches!(FeatureBank::new(Tensor::zeros(&[0, 2]), vec![], 2, "e"), Err(Error::Input(_))));
    assert!(matches!(FeatureBank::new(Tensor::full(&[1, 2], f64::NAN), vec![0], 2, "e"), Err(Error::Numerical(_))));
    let a = FeatureBank::new(Tensor::zeros(&[2, 2]), vec![0, 1], 2, "a").unwrap();
    let b = FeatureBank::new(Tensor::zeros(&[2, 3]), vec![0, 1], 2, "b").unwrap();
    assert!(matches!(probe_train(&a, &b, ProbeHead::Linear, &ProbeConfig::default()), Err(Error::Input(_))));
    let one = FeatureBank::new(Tensor::zeros(&[2, 2]), vec![0, 0], 1, "one").unwrap();
    assert!(matches!(probe_train(&one, &one, ProbeHead::Linear, &ProbeConfig::default()), Err(Error::Input(_))));
}

fn desk_model(seed: u64) -> Model {
    let net = NetConfig {
        input_channels: 1,
        input_size: 16,
        widths: [4, 8],
        pool_grid: 2,
        decoder_hidden: 16,
        classifier_width: 8,
        n_samples: 5,
    };
    let spec = TransformSpec::Affine(AffineSpec::paper());
    let mut m = Model::new(net, DecoderHead::for_spec(&spec), 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    // Wider noise than the initial head gives, so sampling is visible.
    let lv = m.params.get_mut("enc.logvar.b").unwrap();
    lv.data_mut().iter_mut().for_each(|b| *b = -1.0);
    m
}

fn shapes(n: usize) -> Dataset {
    synth_shapes(n, 16, 5, &mut ChaCha8Rng::seed_from_u64(77)).unwrap()
}

#[test]
fn features_are_deterministic_and_permutation_equivariant() {
    let m = desk_model(1);
    let data = shapes(300);
    let a = extract_features(&m, &data, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let b = extract_features(&m, &data, 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.source, m.encoder_digest());
    let mut perm: Vec<usize> = (0..data.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let p = extract_features(&m, &data.subset(&perm).unwrap(), 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(p.labels[row], a.labels[src]);
        for (x, y) in p.row(row).iter().zip(a.row(src)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let c = extract_features(&m, &data, 5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn incompatible_models_are_format_errors() {
    let m = desk_model(1);
    let big = synth_shapes(10, 32, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(extract_features(&m, &big, 5, &mut rng), Err(Error::Format { .. })));
    let three = synth_shapes(10, 16, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(extract_features(&m, &three, 5, &mut rng), Err(Error::Format { .. })));
}

#[test]
fn probing_leaves_the_encoder_untouched() {
    let m = desk_model(2);
    let before = m.encoder_digest();
    let data = shapes(200);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bank = extract_features(&m, &data, 5, &mut rng).unwrap();
    let (train, test) =
        (bank.subset(&(0..150).collect::<Vec<_>>()).unwrap(), bank.subset(&(150..200).collect::<Vec<_>>()).unwrap());
    let cfg = ProbeConfig { epochs: 5, ..ProbeConfig::default() };
    probe_train(&train, &test, ProbeHead::Nonlinear, &cfg).unwrap();
    few_label_protocol(&train, &test, &[2, 5], 2, ProbeHead::Linear, &cfg, &mut rng).unwrap();
    assert_eq!(m.encoder_digest(), before);
}

#[test]
fn full_count_few_label_equals_plain_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let centers = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]];
    let train = clusters(&mut rng, 12, &centers, 0.8);
    let test = clusters(&mut rng, 12, &centers, 0.8);
    let cfg = ProbeConfig { epochs: 10, ..ProbeConfig::default() };
    let plain = probe_train(&train, &test, ProbeHead::Linear, &cfg).unwrap();
    let few = few_label_protocol(&train, &test, &[12], 1, ProbeHead::Linear, &cfg, &mut rng).unwrap();
    assert_eq!(few[0].errors, vec![plain]);
    let again =
        few_label_protocol(&train, &test, &[3, 6], 3, ProbeHead::Linear, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
    let twice =
        few_label_protocol(&train, &test, &[3, 6], 3, ProbeHead::Linear, &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
    assert_eq!(again, twice);
    assert!(matches!(
        few_label_protocol(&train, &test, &[13], 1, ProbeHead::Linear, &cfg, &mut rng),
        Err(Error::Input(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_agrees_with_brute_force_after_shifting(
        seed in 0u64..1000,
        shift in prop::collection::vec(-4.0f64..4.0, 3),
        k in 1usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = random_bank(&mut rng, 30, 3, 3, false);
        let q = Tensor::new(&[5, 3], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let moved = |t: &Tensor| {
            let data = t.data().iter().enumerate().map(|(i, v)| v + shift[i % 3]).collect();
            Tensor::new(t.shape(), data).unwrap()
        };
        let shifted = FeatureBank::new(moved(&bank.features), bank.labels.clone(), 3, "s").unwrap();
        let a = knn_classify(&bank, &q, k).unwrap();
        let b = knn_classify(&shifted, &moved(&q), k).unwrap();
        // Shifting can perturb distances in the last bit, so compare to the
        // brute-force answer on each side instead of to each other.
        for (j, row) in q.data().chunks(3).enumerate() {
            prop_assert_eq!(a[j], brute_force(&bank, row, k));
        }
        for (j, row) in moved(&q).data().chunks(3).enumerate() {
            prop_assert_eq!(b[j], brute_force(&shifted, row, k));
        }
    }
}
