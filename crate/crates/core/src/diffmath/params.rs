//! Named parameter collections.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// A named map from identifier to [`Tensor`].
///
/// Backed by a `BTreeMap`, so iteration order is lexicographic — checkpoints
/// and optimizer state walk parameters in a reproducible order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a fresh parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::invalid(
                "ParamSet::insert",
                format!("duplicate parameter name {name:?}"),
            ));
        }
        self.map.insert(name, tensor);
        Ok(())
    }

    /// Replace an existing parameter's values, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        match self.map.get(name) {
            None => Err(Error::invalid(
                "ParamSet::set",
                format!("unknown parameter {name:?}"),
            )),
            Some(old) if old.shape() != tensor.shape() => Err(Error::dimension(
                format!("ParamSet::set({name})"),
                old.len(),
                tensor.len(),
            )),
            Some(_) => {
                self.map.insert(name.to_string(), tensor);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    /// Lexicographic iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Merge another set into this one; duplicate names are errors.
    pub fn absorb(&mut self, other: ParamSet) -> Result<()> {
        for (name, t) in other.map {
            self.insert(name, t)?;
        }
        Ok(())
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            map: iter.into_iter().collect(),
        }
    }
}
