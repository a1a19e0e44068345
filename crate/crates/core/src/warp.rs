//! Image batches and inverse warping with bilinear interpolation.
//!
//! Pixel `(col, row)` of a `W×H` image has its center at normalized
//! coordinate `((2·col + 1)/W − 1, (2·row + 1)/H − 1)`. Samples falling
//! outside the image read as zero.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::xform::{invert, Homography};

/// Distance to an integer below which a pixel coordinate is snapped onto it,
/// so that identity and whole-pixel warps reproduce pixels exactly.
const SNAP: f64 = 1e-9;

/// `[N, C, H, W]` batch with a declared value range. `N` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    dims: [usize; 4],
    data: Vec<f64>,
    value_range: (f64, f64),
}

impl ImageTensor {
    pub fn new(dims: [usize; 4], data: Vec<f64>, value_range: (f64, f64)) -> Result<Self> {
        if dims[1..].iter().any(|&d| d == 0) {
            return Err(Error::Input(format!("image dimensions must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape("image", &dims, &[data.len()]));
        }
        let (lo, hi) = value_range;
        if let Some((i, v)) =
            data.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= lo - 1e-6 && **v <= hi + 1e-6))
        {
            return Err(Error::Input(format!("pixel {i} = {v} outside declared range [{lo}, {hi}]")));
        }
        Ok(Self { dims, data, value_range })
    }

    /// Batch in the default `[0, 1]` range.
    pub fn unit(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        Self::new(dims, data, (0.0, 1.0))
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::unit(dims, vec![0.0; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn count(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn image_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    /// Pixels of item `i` as `[C, H, W]`.
    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// New batch made of the listed items, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Input("cannot select an empty batch".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            if i >= self.count() {
                return Err(Error::Input(format!("image index {i} out of {}", self.count())));
            }
            data.extend_from_slice(self.image(i));
        }
        let mut dims = self.dims;
        dims[0] = indices.len();
        Ok(Self { dims, data, value_range: self.value_range })
    }

    /// Concatenates batches with identical per-image shape.
    pub fn stack(parts: &[ImageTensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Input("cannot stack zero batches".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        let (mut lo, mut hi) = first.value_range;
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return Err(Error::shape("stack", &first.dims, &p.dims));
            }
            data.extend_from_slice(&p.data);
            n += p.dims[0];
            lo = lo.min(p.value_range.0);
            hi = hi.max(p.value_range.1);
        }
        Ok(Self { dims: [n, first.dims[1], first.dims[2], first.dims[3]], data, value_range: (lo, hi) })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&self.dims, self.data.clone()).expect("dims match data")
    }
}

/// Normalized coordinate of pixel center `i` along an axis of length `n`.
#[inline]
pub fn pixel_to_normalized(i: f64, n: usize) -> f64 {
    (2.0 * i + 1.0) / n as f64 - 1.0
}

/// Continuous pixel index of normalized coordinate `u` along an axis of length `n`.
#[inline]
pub fn normalized_to_pixel(u: f64, n: usize) -> f64 {
    let p = ((u + 1.0) * n as f64 - 1.0) * 0.5;
    let r = p.round();
    if (p - r).abs() < SNAP {
        r
    } else {
        p
    }
}

/// Bilinear read of one `h×w` plane at continuous pixel position `(x, y)`.
#[inline]
fn sample_plane(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |xi: i64, yi: i64| -> f64 {
        if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
            0.0
        } else {
            plane[yi as usize * w + xi as usize]
        }
    };
    let mut v = (1.0 - fx) * (1.0 - fy) * at(x0, y0);
    if fx != 0.0 {
        v += fx * (1.0 - fy) * at(x0 + 1, y0);
    }
    if fy != 0.0 {
        v += (1.0 - fx) * fy * at(x0, y0 + 1);
        if fx != 0.0 {
            v += fx * fy * at(x0 + 1, y0 + 1);
        }
    }
    v
}

/// Samples every plane of `img` at each normalized coordinate.
/// Output layout is `[N, C, M]` for `M` coordinates.
pub fn bilinear_sample(img: &ImageTensor, xy: &[(f64, f64)]) -> Result<Vec<f64>> {
    if let Some((i, p)) = xy.iter().enumerate().find(|(_, p)| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::Input(format!("coordinate {i} is not finite: {p:?}")));
    }
    let (h, w) = (img.height(), img.width());
    let pix: Vec<(f64, f64)> =
        xy.iter().map(|&(u, v)| (normalized_to_pixel(u, w), normalized_to_pixel(v, h))).collect();
    let mut out = Vec::with_capacity(img.count() * img.channels() * xy.len());
    for plane in img.data.chunks(h * w) {
        out.extend(pix.iter().map(|&(x, y)| sample_plane(plane, h, w, x, y)));
    }
    Ok(out)
}

/// Inverse warp: output pixel at normalized `p` reads input at `h⁻¹ · p`.
pub fn warp_image(img: &ImageTensor, h: &Homography, out_hw: (usize, usize)) -> Result<ImageTensor> {
    let (oh, ow) = out_hw;
    if oh == 0 || ow == 0 {
        return Err(Error::Input("output size must be positive".into()));
    }
    let inv = invert(h)?;
    let (ih, iw) = (img.height(), img.width());
    let coords: Vec<Option<(f64, f64)>> = (0..oh)
        .flat_map(|row| (0..ow).map(move |col| (col, row)))
        .map(|(col, row)| {
            let u = pixel_to_normalized(col as f64, ow);
            let v = pixel_to_normalized(row as f64, oh);
            inv.apply(u, v).map(|(su, sv)| (normalized_to_pixel(su, iw), normalized_to_pixel(sv, ih)))
        })
        .collect();
    let mut data = Vec::with_capacity(img.count() * img.channels() * oh * ow);
    for plane in img.data.chunks(ih * iw) {
        data.extend(coords.iter().map(|c| match c {
            Some((x, y)) => sample_plane(plane, ih, iw, *x, *y),
            None => 0.0,
        }));
    }
    let (lo, hi) = img.value_range;
    Ok(ImageTensor { dims: [img.count(), img.channels(), oh, ow], data, value_range: (lo.min(0.0), hi) })
}

/// Warps item `i` of `img` by `hs[i]`, keeping the spatial size.
pub fn warp_each(img: &ImageTensor, hs: &[Homography]) -> Result<ImageTensor> {
    if hs.len() != img.count() {
        return Err(Error::shape("warp_each", &[img.count()], &[hs.len()]));
    }
    let parts = hs
        .iter()
        .enumerate()
        .map(|(i, h)| warp_image(&img.select(&[i])?, h, (img.height(), img.width())))
        .collect::<Result<Vec<_>>>()?;
    ImageTensor::stack(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        let data = (0..h * w).map(|i| i as f64 / (h * w) as f64).collect();
        ImageTensor::unit([1, 1, h, w], data).unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = ramp(7, 5);
        let out = warp_image(&img, &Homography::identity(), (7, 5)).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn pixel_center_and_midpoint_samples() {
        let img = ramp(4, 4);
        let c = (pixel_to_normalized(1.0, 4), pixel_to_normalized(2.0, 4));
        let v = bilinear_sample(&img, &[c]).unwrap();
        assert_eq!(v[0], img.data()[2 * 4 + 1]);
        let mid = (pixel_to_normalized(1.5, 4), pixel_to_normalized(2.0, 4));
        let v = bilinear_sample(&img, &[mid]).unwrap();
        let expect = 0.5 * (img.data()[9] + img.data()[10]);
        assert!((v[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn nan_coordinates_are_rejected() {
        let img = ramp(3, 3);
        assert!(matches!(bilinear_sample(&img, &[(f64::NAN, 0.0)]), Err(Error::Input(_))));
    }

    #[test]
    fn out_of_bounds_reads_zero() {
        let img = ImageTensor::unit([1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let v = bilinear_sample(&img, &[(5.0, 5.0), (-1.0, pixel_to_normalized(0.0, 2))]).unwrap();
        assert_eq!(v[0], 0.0);
        // Half a pixel outside the left border: half weight on the zero pad.
        assert!((v[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_homography_is_rejected_by_warp() {
        // A valid homography whose inverse has m22 = 0 cannot be normalized.
        let h = Homography::new([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        let img = ramp(3, 3);
        assert!(matches!(warp_image(&img, &h, (3, 3)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn image_range_is_validated() {
        assert!(ImageTensor::unit([1, 1, 1, 2], vec![0.5, 1.5]).is_err());
        assert!(ImageTensor::unit([1, 0, 1, 1], vec![]).is_err());
        assert_eq!(ImageTensor::unit([0, 1, 2, 2], vec![]).unwrap().count(), 0);
    }
}
