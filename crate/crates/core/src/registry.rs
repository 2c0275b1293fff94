//! Name-keyed registries of interchangeable strategies.
//!
//! Every algorithm family that can be swapped from a config file or the
//! command line (descriptor variants, neighbor search backends, covariance
//! weightings) is exposed as a trait object behind a [`Registry`].

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{CoreError, Result};

/// Constructor stored in a registry. `O` is the option bag the family
/// needs at construction time (use `()` when there is none).
pub type Factory<T, O> = fn(&O) -> Result<Box<T>>;

pub struct Registry<T: ?Sized, O = ()> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<T, O>>,
}

impl<T: ?Sized, O> Registry<T, O> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, factory: Factory<T, O>) -> &mut Self {
        self.entries.insert(name, factory);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn create(&self, name: &str, options: &O) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(factory) => factory(options),
            None => Err(CoreError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }
}

impl<T: ?Sized, O> fmt::Debug for Registry<T, O> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}
