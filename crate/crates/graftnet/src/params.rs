//! Ordered named-tensor collections: the exchange format between networks,
//! optimizers, grafting, and checkpoints. Order is meaningful and preserved;
//! two collections are congruent when names, order, and shapes all match.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered list of `(name, tensor)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedTensors {
    entries: Vec<(String, Tensor)>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry. Names must be unique within a collection.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Argument(format!("duplicate tensor name {name:?}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
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

    /// Zero tensors with the same names, order, and shapes.
    pub fn zeros_like(&self) -> NamedTensors {
        NamedTensors {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect(),
        }
    }

    /// Errors unless `other` has identical names, order, and shapes.
    pub fn check_congruent(&self, other: &NamedTensors, context: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                context: context.into(),
                expected: format!("{} tensors", self.len()),
                actual: format!("{} tensors", other.len()),
            });
        }
        for ((an, at), (bn, bt)) in self.entries.iter().zip(&other.entries) {
            if an != bn {
                return Err(Error::Shape {
                    context: context.into(),
                    expected: format!("tensor {an:?}"),
                    actual: format!("tensor {bn:?}"),
                });
            }
            if at.shape() != bt.shape() {
                return Err(Error::Shape {
                    context: format!("{context} ({an})"),
                    expected: format!("{:?}", at.shape()),
                    actual: format!("{:?}", bt.shape()),
                });
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a NamedTensors {
    type Item = &'a (String, Tensor);
    type IntoIter = std::slice::Iter<'a, (String, Tensor)>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
