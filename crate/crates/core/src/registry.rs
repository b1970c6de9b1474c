//! Name-keyed registries of interchangeable strategies.
//!
//! Aligners, decoding strategies and evaluation metrics are each exposed
//! behind a trait object and looked up by the name given on the command
//! line or in a config file.

use crate::error::{Error, Result};

type Factory<T, A> = fn(&A) -> Box<T>;

pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T, A>)>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: Vec::new() }
    }

    /// Registers a factory; a later registration under the same name replaces the earlier one.
    pub fn register(&mut self, name: &'static str, factory: Factory<T, A>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = factory,
            None => self.entries.push((name, factory)),
        }
        self
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, f)| f(args)).ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }
}
