use aet_core::warp::{bilinear_sample, normalized_to_pixel, warp_image, ImageTensor};
use aet_core::xform::{affine_matrix, invert, sample_projective, Homography, ProjectiveSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor {
    let data = (0..c * h * w).map(|_| rng.gen::<f64>()).collect();
    ImageTensor::unit([1, c, h, w], data).unwrap()
}

/// Separable Gaussian blur with zero borders, then rescaled into [0, 1].
fn blurred(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> ImageTensor {
    let raw: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = k.iter().sum();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for (j, d) in (-r..=r).enumerate() {
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                        acc += k[j] * src[(sy as usize) * w + sx as usize];
                    }
                }
                out[y as usize * w + x as usize] = acc / ks;
            }
        }
        out
    };
    let b = pass(&pass(&raw, true), false);
    let (lo, hi) = b.iter().fold((f64::MAX, f64::MIN), |(l, u), v| (l.min(*v), u.max(*v)));
    let data = b.iter().map(|v| (v - lo) / (hi - lo)).collect();
    ImageTensor::unit([1, 1, h, w], data).unwrap()
}

#[test]
fn one_pixel_translation_shifts_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (h, w) = (6, 9);
    let img = random_image(&mut rng, 2, h, w);
    let shift = Homography::translation(2.0 / w as f64, 0.0);
    let out = warp_image(&img, &shift, (h, w)).unwrap();
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                let got = out.data()[(c * h + y) * w + x];
                let expect = if x == 0 { 0.0 } else { img.data()[(c * h + y) * w + x - 1] };
                assert_eq!(got, expect, "c={c} y={y} x={x}");
            }
        }
    }
    let down = Homography::translation(0.0, 2.0 / h as f64);
    let out = warp_image(&img, &down, (h, w)).unwrap();
    for x in 0..w {
        assert_eq!(out.data()[x], 0.0);
        assert_eq!(out.data()[w + x], img.data()[x]);
    }
}

#[test]
fn half_turn_of_symmetric_image_is_unchanged() {
    let (h, w) = (8, 8);
    let mut data = vec![0.0; h * w];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for y in 0..h {
        for x in 0..w {
            if data[y * w + x] == 0.0 {
                let v: f64 = rng.gen();
                data[y * w + x] = v;
                data[(h - 1 - y) * w + (w - 1 - x)] = v;
            }
        }
    }
    let img = ImageTensor::unit([1, 1, h, w], data).unwrap();
    let out = warp_image(&img, &Homography::rotation(180.0), (h, w)).unwrap();
    for (a, b) in out.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn bilinear_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (5, 7);
    let img = random_image(&mut rng, 1, h, w);
    let px = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            img.data()[y as usize * w + x as usize]
        }
    };
    let coords: Vec<(f64, f64)> = (0..100).map(|_| (rng.gen_range(-1.3..1.3), rng.gen_range(-1.3..1.3))).collect();
    let got = bilinear_sample(&img, &coords).unwrap();
    for (i, &(u, v)) in coords.iter().enumerate() {
        let x = ((u + 1.0) * w as f64 - 1.0) / 2.0;
        let y = ((v + 1.0) * h as f64 - 1.0) / 2.0;
        let (x0, y0) = (x.floor(), y.floor());
        let (a, b) = (x - x0, y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let expect = (1.0 - a) * (1.0 - b) * px(x0, y0)
            + a * (1.0 - b) * px(x0 + 1, y0)
            + (1.0 - a) * b * px(x0, y0 + 1)
            + a * b * px(x0 + 1, y0 + 1);
        assert!((got[i] - expect).abs() < 1e-12);
    }
}

/// Mean absolute error of warp-then-unwarp over pixels whose round trip stays
/// at least one pixel inside the image in both directions.
fn roundtrip_mae(img: &ImageTensor, h: &Homography) -> f64 {
    let (ih, iw) = (img.height(), img.width());
    let fwd = warp_image(img, h, (ih, iw)).unwrap();
    let back = warp_image(&fwd, &invert(h).unwrap(), (ih, iw)).unwrap();
    let inside = |u: f64, v: f64| {
        let (x, y) = (normalized_to_pixel(u, iw), normalized_to_pixel(v, ih));
        x >= 1.0 && y >= 1.0 && x <= iw as f64 - 2.0 && y <= ih as f64 - 2.0
    };
    let (mut err, mut n) = (0.0, 0);
    for y in 0..ih {
        for x in 0..iw {
            let u = (2 * x + 1) as f64 / iw as f64 - 1.0;
            let v = (2 * y + 1) as f64 / ih as f64 - 1.0;
            let Some((fu, fv)) = h.apply(u, v) else { continue };
            if !inside(u, v) || !inside(fu, fv) {
                continue;
            }
            err += (back.data()[y * iw + x] - img.data()[y * iw + x]).abs();
            n += 1;
        }
    }
    assert!(n > 100, "interior too small: {n}");
    err / n as f64
}

#[test]
fn warp_roundtrip_on_smooth_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..20 {
        let img = blurred(&mut rng, 32, 32, 2.0);
        let h = if i % 2 == 0 {
            affine_matrix(rng.gen_range(-180.0..180.0), 0.05, -0.05, rng.gen_range(0.8..1.2), 10.0).unwrap()
        } else {
            sample_projective(&mut rng, &ProjectiveSpec::paper()).unwrap().h
        };
        let mae = roundtrip_mae(&img, &h);
        assert!(mae < 0.02, "sample {i}: mae {mae}");
    }
}

#[test]
fn warp_is_linear_and_stays_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_image(&mut rng, 1, 12, 10);
    let b = random_image(&mut rng, 1, 12, 10);
    let (ca, cb) = (0.3, 0.6);
    let mix_data: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| ca * x + cb * y).collect();
    let mix = ImageTensor::unit([1, 1, 12, 10], mix_data).unwrap();
    let h = sample_projective(&mut rng, &ProjectiveSpec::paper()).unwrap().h;
    let wm = warp_image(&mix, &h, (12, 10)).unwrap();
    let wa = warp_image(&a, &h, (12, 10)).unwrap();
    let wb = warp_image(&b, &h, (12, 10)).unwrap();
    for i in 0..wm.data().len() {
        assert!((wm.data()[i] - (ca * wa.data()[i] + cb * wb.data()[i])).abs() < 1e-9);
        assert!(wa.data()[i] >= 0.0 && wa.data()[i] <= 1.0);
    }
    // Shifted range: zero padding may fall below lo but never above hi.
    let shifted =
        ImageTensor::new([1, 1, 12, 10], a.data().iter().map(|v| 0.5 + 0.5 * v).collect(), (0.5, 1.0)).unwrap();
    let ws = warp_image(&shifted, &h, (6, 5)).unwrap();
    assert_eq!(ws.dims(), [1, 1, 6, 5]);
    assert!(ws.data().iter().all(|v| *v >= 0.0 && *v <= 1.0));
}
