use super::Dataset;
use crate::error::{Error, Result};
use crate::warp::ImageTensor;
use std::path::Path;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

/// One label byte followed by the R, G and B planes, row-major.
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * PLANE;

/// Parses a CIFAR-10 binary batch. Pixels are scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    let whole = bytes.len() / CIFAR_RECORD_LEN;
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::format(
            (whole * CIFAR_RECORD_LEN) as u64,
            format!(
                "truncated record {whole}: {} trailing bytes, expected {CIFAR_RECORD_LEN}",
                bytes.len() % CIFAR_RECORD_LEN
            ),
        ));
    }
    let mut labels = Vec::with_capacity(whole);
    let mut data = Vec::with_capacity(whole * 3 * PLANE);
    for (k, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::format((k * CIFAR_RECORD_LEN) as u64, format!("label byte {} outside 0..10", rec[0])));
        }
        labels.push(usize::from(rec[0]));
        data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    let images = ImageTensor::unit([whole, 3, SIDE, SIDE], data)?;
    Dataset::new(images, Some(labels), 10, "cifar10")
}

pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes)
}

/// Writes `ds` in CIFAR-10 binary layout, quantizing pixels to bytes.
pub fn write_cifar10_binary(ds: &Dataset, path: &Path) -> Result<()> {
    let [_, c, h, w] = ds.images.dims();
    if c != 3 || h != SIDE || w != SIDE {
        return Err(Error::shape("write_cifar10_binary", &[3, SIDE, SIDE], &[c, h, w]));
    }
    let labels = ds.require_labels()?;
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD_LEN);
    for (i, &y) in labels.iter().enumerate() {
        out.push(u8::try_from(y).map_err(|_| Error::Input(format!("label {y} does not fit a byte")))?);
        out.extend(ds.images.image(i).iter().map(|v| quantize(*v)));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
