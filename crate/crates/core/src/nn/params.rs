use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered collection of named tensors.
///
/// Order and names are part of an architecture's contract: two instances of
/// the same architecture always list the same names with the same shapes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.entries.push((name.into(), tensor));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn at(&self, index: usize) -> &Tensor {
        &self.entries[index].1
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.entries[index].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Checks that `other` lists exactly the same names and shapes, in order.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::CheckpointIncompatible(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.entries.iter().zip(&other.entries) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::CheckpointIncompatible(format!(
                    "tensor `{a}` {:?} does not match `{b}` {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Copies values from `other`, which must be compatible.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Copies values by name. Every tensor of `self` must be present in
    /// `source` with the same shape, and `source` may not carry extras.
    pub fn assign_by_name(&mut self, source: &ParamSet) -> Result<()> {
        for (name, dst) in self.entries.iter_mut() {
            let src = source.get(name).ok_or_else(|| {
                Error::CheckpointIncompatible(format!("missing tensor `{name}`"))
            })?;
            if src.shape() != dst.shape() {
                return Err(Error::CheckpointIncompatible(format!(
                    "tensor `{name}` has shape {:?}, architecture expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        if let Some(extra) = source.names().find(|n| self.get(n).is_none()) {
            return Err(Error::CheckpointIncompatible(format!(
                "unexpected tensor `{extra}`"
            )));
        }
        Ok(())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += s;
            }
        }
        Ok(())
    }

    /// Largest absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f32> {
        self.check_compatible(other)?;
        let mut m = 0.0f32;
        for ((_, a), (_, b)) in self.entries.iter().zip(&other.entries) {
            for (x, y) in a.data().iter().zip(b.data()) {
                m = m.max((x - y).abs());
            }
        }
        Ok(m)
    }
}
