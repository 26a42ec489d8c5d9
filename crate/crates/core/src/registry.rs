//! Name-keyed registries for interchangeable strategies.
//!
//! Lagrangian families, optimizers and equation forms are each exposed behind
//! a trait object and looked up by name at runtime (from the CLI or a run
//! config). The [`Registry`] type is the shared machinery.

use std::collections::BTreeMap;
use std::fmt;

type Factory<T, P> = Box<dyn Fn(&P) -> crate::Result<Box<T>> + Send + Sync>;

/// Maps names to factories producing boxed trait objects from parameters `P`.
pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    entries: BTreeMap<String, (String, Factory<T, P>)>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, summary: &str, factory: F) -> &mut Self
    where
        F: Fn(&P) -> crate::Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries
            .insert(name.to_string(), (summary.to_string(), Box::new(factory)));
        self
    }

    pub fn create(&self, name: &str, params: &P) -> crate::Result<Box<T>> {
        match self.entries.get(name) {
            Some((_, factory)) => factory(params),
            None => Err(self.unknown(name)),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn describe(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (s, _))| (k.as_str(), s.as_str()))
    }

    fn unknown(&self, name: &str) -> crate::Error {
        match self.kind {
            "family" => crate::Error::UnknownFamily(name.to_string()),
            "optimizer" => crate::Error::UnknownOptimizer(name.to_string()),
            _ => crate::Error::UnknownForm(name.to_string()),
        }
    }
}

impl<T: ?Sized, P> fmt::Debug for Registry<T, P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}
