use aet_core::xform::{
    compose, decode_target, encode_target, invert, projective_matrix, sample_affine, sample_projective, AffineSpec,
    Homography, Interval, ProjectiveSpec, RawParams, TransformKind, TransformSpec, CORNERS,
};
use nalgebra::{DMatrix, SVD};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent DLT: null vector of the 8×9 system via SVD, then scaled so
/// the bottom-right entry is 1.
fn dlt_oracle(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> [[f64; 3]; 3] {
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let svd = SVD::new(a, true, true);
    let v_t = svd.v_t.unwrap();
    let (min_idx, _) = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let h: Vec<f64> = v_t.row(min_idx).iter().cloned().collect();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = h[3 * i + j] / h[8];
        }
    }
    m
}

fn max_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn single_corner_offset_matches_svd_oracle() {
    // Move BR corner (index 2) by (+0.1, +0.1) of the size.
    let mut offsets = [0.0; 8];
    offsets[4] = 0.1;
    offsets[5] = 0.1;
    let h = projective_matrix(&offsets, 1.0, 0).unwrap().unwrap();
    let mut dst = CORNERS;
    dst[2] = (1.2, 1.2);
    let oracle = dlt_oracle(&CORNERS, &dst);
    assert!(max_diff(h.matrix(), &oracle) < 1e-9, "{:?} vs {:?}", h.matrix(), oracle);
}

#[test]
fn sampled_projective_matches_svd_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let t = sample_projective(&mut rng, &ProjectiveSpec::paper()).unwrap();
        let dst: Vec<(f64, f64)> = CORNERS.iter().map(|&(x, y)| t.h.apply(x, y).unwrap()).collect();
        let oracle = dlt_oracle(&CORNERS, &dst.try_into().unwrap());
        assert!(max_diff(t.h.matrix(), &oracle) < 1e-9);
    }
}

#[test]
fn paper_affine_draws_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = AffineSpec::paper();
    for _ in 0..10_000 {
        let t = sample_affine(&mut rng, &spec).unwrap();
        let RawParams::Affine { rotation_deg, translate_x, translate_y, scale, shear_deg } = t.raw else {
            panic!("affine draw expected");
        };
        assert!((-180.0..=180.0).contains(&rotation_deg));
        assert!((0.7..=1.3).contains(&scale));
        assert!((-30.0..=30.0).contains(&shear_deg));
        assert!((-0.2..=0.2).contains(&translate_x));
        assert!((-0.2..=0.2).contains(&translate_y));
        assert!(t.h.linear_det().abs() > 0.0);
        assert_eq!(t.h.matrix()[2][2], 1.0);
    }
}

#[test]
fn paper_projective_draws_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let spec = ProjectiveSpec::paper();
    for _ in 0..10_000 {
        let t = sample_projective(&mut rng, &spec).unwrap();
        let RawParams::Projective { offsets, pre_scale, pre_rotation_deg } = t.raw else {
            panic!("projective draw expected");
        };
        assert!(offsets.iter().all(|o| spec.corner.contains(*o)));
        assert!(spec.pre_scale.contains(pre_scale));
        assert!(spec.pre_rotations.contains(&pre_rotation_deg));
    }
}

#[test]
fn group_laws_over_seeded_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let specs = [TransformSpec::Affine(AffineSpec::paper()), TransformSpec::Projective(ProjectiveSpec::paper())];
    let id = Homography::identity();
    for i in 0..1_000 {
        let spec = &specs[i % 2];
        let a = spec.sample(&mut rng).unwrap().h;
        let b = spec.sample(&mut rng).unwrap().h;
        let c = specs[(i + 1) % 2].sample(&mut rng).unwrap().h;
        assert!(compose(&id, &a).unwrap().max_abs_diff(&a) < 1e-12);
        assert!(compose(&a, &id).unwrap().max_abs_diff(&a) < 1e-12);
        let inv = invert(&a).unwrap();
        assert!(compose(&a, &inv).unwrap().max_abs_diff(&id) < 1e-9);
        assert!(compose(&inv, &a).unwrap().max_abs_diff(&id) < 1e-9);
        assert!(invert(&inv).unwrap().max_abs_diff(&a) < 1e-9);
        let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }
}

#[test]
fn double_inversion_matches_matrix_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..200 {
        let h = sample_projective(&mut rng, &ProjectiveSpec::paper()).unwrap().h;
        let m = h.matrix();
        let dm = DMatrix::from_fn(3, 3, |i, j| m[i][j]);
        let inv = dm.clone().try_inverse().unwrap();
        let ours = invert(&h).unwrap();
        let scale = inv[(2, 2)];
        for i in 0..3 {
            for j in 0..3 {
                assert!((ours.matrix()[i][j] - inv[(i, j)] / scale).abs() < 1e-9);
            }
        }
        assert!(invert(&ours).unwrap().max_abs_diff(&h) < 1e-9);
    }
}

#[test]
fn zero_corner_range_stays_in_pre_transform_set() {
    let spec = ProjectiveSpec {
        corner: Interval::point(0.0),
        pre_scale: Interval::new(0.8, 1.2).unwrap(),
        pre_rotations: vec![0, 90, 180, 270],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for _ in 0..500 {
        let t = sample_projective(&mut rng, &spec).unwrap();
        let RawParams::Projective { pre_scale, pre_rotation_deg, .. } = t.raw else { unreachable!() };
        let expect =
            compose(&Homography::rotation(f64::from(pre_rotation_deg)), &Homography::scaling(pre_scale).unwrap())
                .unwrap();
        assert!(t.h.max_abs_diff(&expect) < 1e-12);
        assert!(t.h.is_affine() || t.h.matrix()[2][0].abs() < 1e-12);
    }
}

#[test]
fn standardized_projective_targets_have_unit_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let n = 1_000;
    let targets: Vec<Vec<f64>> = (0..n)
        .map(|_| encode_target(&sample_projective(&mut rng, &ProjectiveSpec::paper()).unwrap()).unwrap())
        .collect();
    for d in 0..8 {
        let mean = targets.iter().map(|t| t[d]).sum::<f64>() / n as f64;
        let var = targets.iter().map(|t| (t[d] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.25, "dim {d} mean {mean}");
        assert!((0.5..=2.0).contains(&var.sqrt()), "dim {d} std {}", var.sqrt());
    }
}

proptest! {
    #[test]
    fn target_encoding_round_trips(seed in any::<u64>(), projective in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = if projective {
            sample_projective(&mut rng, &ProjectiveSpec::paper()).unwrap()
        } else {
            sample_affine(&mut rng, &AffineSpec::paper()).unwrap()
        };
        let kind = t.kind();
        let v = encode_target(&t).unwrap();
        let back = decode_target(&v, kind).unwrap();
        prop_assert!(back.max_abs_diff(&t.h) < 1e-9);
        let kind_dim = if kind == TransformKind::Affine { 6 } else { 8 };
        prop_assert_eq!(v.len(), kind_dim);
        // decode ∘ encode ∘ decode on the vector side.
        let again = encode_target(&aet_core::xform::TransformParams { raw: t.raw.clone(), h: back }).unwrap();
        for (a, b) in v.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
