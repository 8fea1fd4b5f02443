use std::collections::HashMap;

use super::graph::{Gradients, Graph, LeafKind, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Ordered collection of named parameter tensors.
///
/// Names are dotted paths (`enc.l1.spatial`) and double as checkpoint keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, t));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }

    pub fn extend(&mut self, other: &Self) {
        for (n, t) in other.iter() {
            self.insert(n, t.clone());
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast());
        }
        out
    }

    /// Checks that `other` has exactly the same names and shapes, in any order.
    pub fn same_structure(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::StructureMismatch(format!(
                "{} entries vs {}",
                self.len(),
                other.len()
            )));
        }
        for (name, t) in self.iter() {
            match other.get(name) {
                None => return Err(Error::StructureMismatch(format!("missing `{name}`"))),
                Some(o) if o.shape() != t.shape() => {
                    return Err(Error::StructureMismatch(format!(
                        "`{name}`: {:?} vs {:?}",
                        t.shape(),
                        o.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Places every entry on `g` as a leaf of the given kind.
    pub fn bind(&self, g: &Graph<T>, kind: LeafKind) -> BoundParams {
        let vars = self
            .iter()
            .map(|(n, t)| {
                let v = match kind {
                    LeafKind::Trainable => g.param(t),
                    LeafKind::Frozen => g.frozen(t),
                    LeafKind::Constant => g.constant(t),
                };
                (n.to_string(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Collects per-entry gradients; disconnected entries get zeros.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &BoundParams, grads: &Gradients<T>) -> Self {
        let mut out = Self::new();
        for (name, _) in self.iter() {
            out.insert(name, grads.wrt(g, bound.var(name)));
        }
        out
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    /// Panics if `name` was never bound; model code and its parameter
    /// layout are built together, so a miss is a programming error.
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn merged(mut self, other: BoundParams) -> Self {
        self.vars.extend(other.vars);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}
