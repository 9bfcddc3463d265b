//! Name-keyed registries of interchangeable strategies.
//!
//! A strategy is selected at runtime from a spec string of the form
//! `name` or `name:key=value,key=value`. Each registry maps names to
//! factories that build a boxed trait object from the parsed parameters and
//! a caller-supplied context.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parameters parsed from the `key=value` part of a strategy spec.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Params {
    values: BTreeMap<String, String>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.values.insert(key.to_string(), value.to_string());
        self
    }

    /// Parses `k=v,k=v`. An empty string yields no parameters.
    pub fn parse(s: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got `{item}`")))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::InvalidSpec(format!("cannot parse `{key}={v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails when a key outside `allowed` is present.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::InvalidSpec(format!(
                "unknown parameter `{k}` (allowed: {})",
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// A parsed `name:params` strategy spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategySpec {
    pub name: String,
    pub params: Params,
}

impl FromStr for StrategySpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::InvalidSpec(format!("empty strategy name in `{s}`")));
        }
        Ok(Self {
            name: name.to_string(),
            params: Params::parse(rest)?,
        })
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.params.is_empty() {
            f.write_str(&self.name)
        } else {
            write!(f, "{}:{}", self.name, self.params)
        }
    }
}

type Factory<T, C> = Box<dyn Fn(&Params, &C) -> Result<Box<T>> + Send + Sync>;

struct Entry<T: ?Sized, C> {
    summary: &'static str,
    factory: Factory<T, C>,
}

pub struct Registry<T: ?Sized, C = ()> {
    kind: &'static str,
    entries: BTreeMap<String, Entry<T, C>>,
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: &str, summary: &'static str, factory: F) -> &mut Self
    where
        F: Fn(&Params, &C) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(
            name.to_string(),
            Entry {
                summary,
                factory: Box::new(factory),
            },
        );
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// `(name, summary)` pairs in name order.
    pub fn describe(&self) -> Vec<(&str, &'static str)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), e.summary)).collect()
    }

    pub fn build(&self, spec: &StrategySpec, ctx: &C) -> Result<Box<T>> {
        let entry = self.entries.get(&spec.name).ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: spec.name.clone(),
            available: self.names().collect::<Vec<_>>().join(", "),
        })?;
        (entry.factory)(&spec.params, ctx)
    }

    pub fn build_str(&self, spec: &str, ctx: &C) -> Result<Box<T>> {
        self.build(&spec.parse()?, ctx)
    }
}
