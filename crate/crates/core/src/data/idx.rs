use super::cifar::quantize;
use super::Dataset;
use crate::error::{Error, Result};
use crate::warp::ImageTensor;
use std::path::Path;

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte array with four dimensions, used for multi-channel images.
const IDX_CHANNEL_IMAGES_MAGIC: u32 = 0x0000_0804;

/// Raw unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxContent {
    Images(ImageTensor),
    Labels(Vec<usize>),
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "file ends inside the magic number"));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if !matches!(magic, IDX_LABELS_MAGIC | IDX_IMAGES_MAGIC | IDX_CHANNEL_IMAGES_MAGIC) {
        return Err(Error::format(0, format!("unsupported magic 0x{magic:08x}")));
    }
    let ndim = usize::from(bytes[3]);
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(bytes.len() as u64, format!("file ends inside the {ndim}-dimension header")));
    }
    let dims: Vec<usize> =
        bytes[4..header].chunks_exact(4).map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    let expected = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let Some(expected) = expected else {
        return Err(Error::format(4, format!("dimensions {dims:?} overflow")));
    };
    let body = bytes.len() - header;
    if body != expected {
        return Err(Error::format(
            (header + body.min(expected)) as u64,
            format!("expected {expected} data bytes for dims {dims:?}, found {body}"),
        ));
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

pub fn encode_idx(arr: &IdxArray) -> Result<Vec<u8>> {
    let magic = match arr.dims.len() {
        1 => IDX_LABELS_MAGIC,
        3 => IDX_IMAGES_MAGIC,
        4 => IDX_CHANNEL_IMAGES_MAGIC,
        n => return Err(Error::Input(format!("IDX arrays with {n} dimensions are not supported"))),
    };
    if arr.dims.iter().product::<usize>() != arr.data.len() {
        return Err(Error::shape("encode_idx", &arr.dims, &[arr.data.len()]));
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &arr.dims {
        let d = u32::try_from(d).map_err(|_| Error::Input(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    Ok(out)
}

fn write_array(arr: &IdxArray, path: &Path) -> Result<()> {
    let bytes = encode_idx(arr)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn images_from(arr: IdxArray) -> Result<ImageTensor> {
    let dims = match arr.dims[..] {
        [n, h, w] => [n, 1, h, w],
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::format(3, format!("{} dimensions do not describe images", arr.dims.len()))),
    };
    ImageTensor::unit(dims, arr.data.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Reads an IDX file as images (`0x803`, `[N, H, W]`) or labels (`0x801`).
pub fn load_idx(path: &Path) -> Result<IdxContent> {
    let arr = read_idx(path)?;
    if arr.dims.len() == 1 {
        Ok(IdxContent::Labels(arr.data.iter().map(|&b| usize::from(b)).collect()))
    } else {
        images_from(arr).map(IdxContent::Images)
    }
}

/// Pairs an image file with an optional label file. Without an explicit
/// `class_count` it is taken as one past the largest label.
pub fn load_idx_dataset(images: &Path, labels: Option<&Path>, class_count: Option<usize>) -> Result<Dataset> {
    let IdxContent::Images(img) = load_idx(images)? else {
        return Err(Error::format(3, format!("{} holds labels, not images", images.display())));
    };
    let labels = match labels {
        None => None,
        Some(p) => match load_idx(p)? {
            IdxContent::Labels(l) => Some(l),
            IdxContent::Images(_) => return Err(Error::format(3, format!("{} holds images, not labels", p.display()))),
        },
    };
    let class_count = class_count.or_else(|| labels.as_ref().map(|l| l.iter().max().map_or(1, |m| m + 1))).unwrap_or(1);
    let name = images.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "idx".into());
    Dataset::new(img, labels, class_count, name)
}

pub fn write_idx_images(img: &ImageTensor, path: &Path) -> Result<()> {
    let [n, c, h, w] = img.dims();
    let dims = if c == 1 { vec![n, h, w] } else { vec![n, c, h, w] };
    let data = img.data().iter().map(|v| quantize(*v)).collect();
    write_array(&IdxArray { dims, data }, path)
}

pub fn write_idx_labels(labels: &[usize], path: &Path) -> Result<()> {
    let data = labels
        .iter()
        .map(|&y| u8::try_from(y).map_err(|_| Error::Input(format!("label {y} does not fit a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    write_array(&IdxArray { dims: vec![labels.len()], data }, path)
}

/// Exports images and, when present, labels.
pub fn write_idx_dataset(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    write_idx_images(&ds.images, images)?;
    if let Some(l) = &ds.labels {
        write_idx_labels(l, labels)?;
    }
    Ok(())
}
