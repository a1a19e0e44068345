//! Datasets: CIFAR-10 binary and IDX loaders plus a synthetic shapes generator.

mod cifar;
mod idx;
mod synth;

pub use cifar::{load_cifar10_binary, parse_cifar10, write_cifar10_binary, CIFAR_RECORD_LEN};
pub use idx::{
    encode_idx, load_idx, load_idx_dataset, parse_idx, read_idx, write_idx_dataset, write_idx_images, write_idx_labels,
    IdxArray, IdxContent, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synth::{gaussian_blur, synth_shapes, SHAPE_NAMES};

use crate::error::{Error, Result};
use crate::warp::ImageTensor;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: ImageTensor,
    pub labels: Option<Vec<usize>>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        images: ImageTensor,
        labels: Option<Vec<usize>>,
        class_count: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let (lo, hi) = images.value_range();
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::Input(format!("dataset images must lie in [0, 1], declared [{lo}, {hi}]")));
        }
        if let Some(l) = &labels {
            if l.len() != images.count() {
                return Err(Error::shape("dataset labels", &[images.count()], &[l.len()]));
            }
            if let Some((i, y)) = l.iter().enumerate().find(|(_, y)| **y >= class_count) {
                return Err(Error::Input(format!("label {y} at index {i} outside [0, {class_count})")));
            }
        }
        Ok(Self { images, labels, class_count, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.images.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels, or an input error for unlabeled data.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or_else(|| Error::Input(format!("dataset '{}' has no labels", self.name)))
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select(indices)?;
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self { images, labels, class_count: self.class_count, name: self.name.clone() })
    }

    /// Splits into the first `n` items and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::Input(format!("split point {n} must lie strictly inside 0..{}", self.len())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    pub fn class_histogram(&self) -> Result<Vec<usize>> {
        let mut h = vec![0; self.class_count];
        for &y in self.require_labels()? {
            h[y] += 1;
        }
        Ok(h)
    }

    /// Indices of `per_class` randomly chosen items of every class, returned
    /// in ascending order.
    pub fn stratified_indices<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Result<Vec<usize>> {
        let labels = self.require_labels()?;
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut out = Vec::with_capacity(per_class * self.class_count);
        for (c, members) in by_class.iter_mut().enumerate() {
            if members.len() < per_class {
                return Err(Error::Input(format!("class {c} has {} examples, {per_class} requested", members.len())));
            }
            members.shuffle(rng);
            out.extend_from_slice(&members[..per_class]);
        }
        out.sort_unstable();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Dataset {
        let images = ImageTensor::unit([6, 1, 1, 1], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        Dataset::new(images, Some(vec![0, 1, 2, 0, 1, 2]), 3, "tiny").unwrap()
    }

    #[test]
    fn labels_are_validated() {
        let images = ImageTensor::unit([2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new(images.clone(), Some(vec![0, 3]), 3, "x").is_err());
        assert!(Dataset::new(images, Some(vec![0]), 3, "x").is_err());
    }

    #[test]
    fn stratified_indices_are_balanced_and_sorted() {
        let d = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = d.stratified_indices(2, &mut rng).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        let idx = d.stratified_indices(1, &mut rng).unwrap();
        let sub = d.subset(&idx).unwrap();
        assert_eq!(sub.class_histogram().unwrap(), vec![1, 1, 1]);
        assert!(d.stratified_indices(3, &mut rng).is_err());
    }

    #[test]
    fn split_keeps_order() {
        let (a, b) = tiny().split_at(4).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(b.images.data(), &[0.8, 1.0]);
        assert_eq!(b.labels.unwrap(), vec![1, 2]);
    }
}
