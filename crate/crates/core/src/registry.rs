//! Name-indexed registries of interchangeable strategies.
//!
//! Metrics and evaluation modes are looked up by name at runtime so the CLI
//! and configuration files can select them without a closed `match`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A constructor registered under a name. `P` is the parameter bundle handed
/// to every constructor, `T` the (usually unsized) strategy trait.
pub type Constructor<P, T> = fn(&P) -> Result<Box<T>>;

pub struct Registry<P, T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Constructor<P, T>>,
}

impl<P, T: ?Sized> Registry<P, T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `ctor` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &str, ctor: Constructor<P, T>) -> &mut Self {
        self.entries.insert(name.to_ascii_lowercase(), ctor);
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_ascii_lowercase())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Builds the strategy registered under `name` (case-insensitive).
    pub fn build(&self, name: &str, params: &P) -> Result<Box<T>> {
        let ctor = self
            .entries
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| Error::Unknown {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })?;
        ctor(params)
    }
}
