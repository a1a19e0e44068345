use super::Dataset;
use crate::error::{Error, Result};
use crate::warp::ImageTensor;
use rand::seq::SliceRandom;
use rand::Rng;
use std::f64::consts::PI;

/// Shape kinds in class-index order. None of them is invariant under a
/// nontrivial rotation.
pub const SHAPE_NAMES: [&str; 5] = ["knobbed-bar", "long-arm-cross", "broken-ring", "corner", "wedge"];

const STROKE: f64 = 0.11;
const BLUR_SIGMA: f64 = 0.7;

fn segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Signed distance from `p` (shape-local units) to the outline of `kind`.
fn shape_distance(kind: usize, p: (f64, f64)) -> f64 {
    match kind {
        0 => {
            let bar = segment(p, (-0.7, 0.0), (0.5, 0.0)) - STROKE;
            let knob = (p.0 - 0.55).hypot(p.1) - 0.25;
            bar.min(knob)
        }
        1 => {
            let long = segment(p, (-0.35, 0.0), (0.85, 0.0));
            let short = segment(p, (0.0, -0.35), (0.0, 0.35));
            long.min(short) - STROKE
        }
        2 => {
            let r = 0.55;
            let gap = 0.7;
            let ang = p.1.atan2(p.0);
            if ang.abs() > gap {
                (p.0.hypot(p.1) - r).abs() - STROKE
            } else {
                let end = (r * gap.cos(), r * gap.sin());
                let d1 = (p.0 - end.0).hypot(p.1 - end.1);
                let d2 = (p.0 - end.0).hypot(p.1 + end.1);
                d1.min(d2) - STROKE
            }
        }
        3 => {
            let a = segment(p, (-0.45, -0.6), (-0.45, 0.45));
            let b = segment(p, (-0.45, 0.45), (0.6, 0.45));
            a.min(b) - STROKE
        }
        _ => {
            let v = [(-0.55, -0.4), (0.75, 0.0), (-0.55, 0.4)];
            let mut d = f64::INFINITY;
            let mut inside = true;
            for i in 0..3 {
                let (a, b) = (v[i], v[(i + 1) % 3]);
                d = d.min(segment(p, a, b));
                let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
                inside &= cross >= 0.0;
            }
            if inside {
                -d
            } else {
                d
            }
        }
    }
}

/// Separable Gaussian blur of every plane with zero padding.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("blur sigma must be positive, got {sigma}")));
    }
    let [n, c, h, w] = img.dims();
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= ks);
    let mut out = Vec::with_capacity(img.data().len());
    let mut tmp = vec![0.0; h * w];
    for plane in img.data().chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, d) in (-r..=r).enumerate() {
                    let sx = x as i64 + d;
                    if sx >= 0 && sx < w as i64 {
                        acc += k[j] * plane[y * w + sx as usize];
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, d) in (-r..=r).enumerate() {
                    let sy = y as i64 + d;
                    if sy >= 0 && sy < h as i64 {
                        acc += k[j] * tmp[sy as usize * w + x];
                    }
                }
                out.push(acc);
            }
        }
    }
    let (lo, hi) = img.value_range();
    ImageTensor::new([n, c, h, w], out, (lo.min(0.0), hi.max(0.0)))
}

fn render<R: Rng + ?Sized>(kind: usize, size: usize, rng: &mut R) -> Vec<f64> {
    let theta = rng.gen_range(-PI..PI);
    let scale = rng.gen_range(0.5..0.72);
    let max_shift = 4.0 * 2.0 / size as f64;
    let cx = rng.gen_range(-max_shift..max_shift);
    let cy = rng.gen_range(-max_shift..max_shift);
    let intensity = rng.gen_range(0.7..1.0);
    let (s, c) = theta.sin_cos();
    let pixel = 2.0 / size as f64 / scale;
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let u = (2 * col + 1) as f64 / size as f64 - 1.0 - cx;
            let v = (2 * row + 1) as f64 / size as f64 - 1.0 - cy;
            let p = ((c * u + s * v) / scale, (-s * u + c * v) / scale);
            let d = shape_distance(kind, p);
            out.push(intensity * (0.5 - d / pixel).clamp(0.0, 1.0));
        }
    }
    out
}

/// `n` grayscale `size×size` images of randomly posed shapes, labelled by
/// shape kind, with class counts balanced to within one.
pub fn synth_shapes<R: Rng + ?Sized>(n: usize, size: usize, class_count: usize, rng: &mut R) -> Result<Dataset> {
    if class_count == 0 || class_count > SHAPE_NAMES.len() {
        return Err(Error::Input(format!("class_count must be in 1..={}, got {class_count}", SHAPE_NAMES.len())));
    }
    if n < class_count {
        return Err(Error::Input(format!("need at least {class_count} images, got {n}")));
    }
    if size < 8 {
        return Err(Error::Input(format!("image size {size} is too small")));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(n * size * size);
    for &y in &labels {
        data.extend(render(y, size, rng));
    }
    let sharp = ImageTensor::unit([n, 1, size, size], data)?;
    let blurred = gaussian_blur(&sharp, BLUR_SIGMA)?;
    let images = ImageTensor::unit(blurred.dims(), blurred.data().to_vec())?;
    Dataset::new(images, Some(labels), class_count, "shapes")
}
