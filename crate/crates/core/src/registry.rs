//! Name-keyed registry of interchangeable strategies.
//!
//! A registry maps a stable name (as written in config files and on the
//! command line) to a constructor producing a boxed trait object from shared
//! settings. Built-in registries live next to their traits:
//! [`crate::thermo::estimators`] and [`crate::ground_state::solvers`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Constructor stored in a [`Registry`].
pub type Factory<T, S> = fn(&S) -> Box<T>;

struct Entry<T: ?Sized, S> {
    description: &'static str,
    factory: Factory<T, S>,
}

/// Strategies of trait `T`, constructed from settings `S`.
pub struct Registry<T: ?Sized, S> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Entry<T, S>>,
}

impl<T: ?Sized, S> Registry<T, S> {
    /// Empty registry; `kind` names the strategy family in error messages.
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(
        &mut self,
        name: &'static str,
        description: &'static str,
        factory: Factory<T, S>,
    ) -> &mut Self {
        self.entries.insert(name, Entry { description, factory });
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names, sorted.
    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn describe(&self) -> Vec<(&'static str, &'static str)> {
        self.entries.iter().map(|(n, e)| (*n, e.description)).collect()
    }

    /// Builds the strategy registered as `name`.
    pub fn build(&self, name: &str, settings: &S) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(e) => Ok((e.factory)(settings)),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}
