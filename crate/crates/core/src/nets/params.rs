use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        self.names.push(name);
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and the exact bits of every value.
    pub fn digest(&self) -> String {
        self.digest_where(|_| true)
    }

    /// Digest restricted to parameters whose name satisfies `keep`.
    pub fn digest_where(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter().filter(|(n, _)| keep(n)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Places every parameter on `g`, tracked for gradients when `train` is set.
    pub fn bind(&self, g: &mut Graph, train: bool) -> BoundParams {
        BoundParams { vars: self.tensors.iter().map(|t| g.leaf(t.clone(), train)).collect() }
    }

    /// Replaces all values by those of `other`, which must have the same
    /// names and shapes in the same order.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_layout(other)?;
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Contract(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    self.names[i],
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Graph handles for the parameters of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}
