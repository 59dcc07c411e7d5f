use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// Named tensors with frozen flags, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, frozen: bool) -> Result<(), NnError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.entries.insert(name, Param { tensor, frozen });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>, NnError> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>, NnError> {
        Ok(&self.get(name)?.tensor)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, NnError> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets the frozen flag on every entry whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.iter().filter(|(_, p)| !p.frozen).map(|(n, _)| n).collect()
    }

    /// Total element count of entries selected by `filter`.
    pub fn count(&self, filter: impl Fn(&str, &Param<T>) -> bool) -> usize {
        self.iter().filter(|(n, p)| filter(n, p)).map(|(_, p)| p.tensor.len()).sum()
    }

    /// Moves every entry of `other` into `self`.
    pub fn merge(&mut self, other: ParamStore<T>) -> Result<(), NnError> {
        for (name, p) in other.entries {
            self.insert(name, p.tensor, p.frozen)?;
        }
        Ok(())
    }

    /// Copy holding only entries under `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes, frozen flags and raw little-endian data of
    /// the entries under `prefix`, hex encoded.
    pub fn content_hash(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for (name, p) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            hasher.update((name.len() as u32).to_le_bytes());
            hasher.update(name.as_bytes());
            for d in p.tensor.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            hasher.update([p.frozen as u8]);
            buf.clear();
            for v in p.tensor.data() {
                v.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        hex::encode(hasher.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, p)| {
                    (
                        n.clone(),
                        Param {
                            tensor: p.tensor.cast(),
                            frozen: p.frozen,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Binds store entries to graph leaves on first use.
///
/// In training mode non-frozen entries become gradient-carrying leaves; in
/// inference mode nothing carries a gradient.
pub struct Binder<'a, T> {
    store: &'a ParamStore<T>,
    train: bool,
    bound: HashMap<String, Var>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>, train: bool) -> Self {
        Self {
            store,
            train,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn var(&mut self, graph: &mut Graph<T>, name: &str) -> Result<Var, NnError> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let p = self.store.get(name)?;
        let v = graph.leaf(p.tensor.clone(), self.train && !p.frozen);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names and vars of every bound entry that carries a gradient.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = self
            .bound
            .iter()
            .filter(|(n, _)| self.train && !self.store.get(n).map(|p| p.frozen).unwrap_or(true))
            .map(|(n, v)| (n.clone(), *v))
            .collect();
        out.sort();
        out
    }
}
