//! Name-keyed registries of interchangeable numerical strategies.
//!
//! Every pluggable algorithm family (ODE integrators, kernel-scale rules,
//! eigensolvers, lifting optimizers) is a trait object built by a factory
//! registered under a short name. A [`StrategySpec`] selects one by name and
//! carries its numeric parameters, so a configuration file or command line
//! can pick `lanczos:krylov_dim=60` without the caller knowing the type.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strategy name plus named numeric parameters.
///
/// Serialized as the compact string form, e.g. `"median:factor=5"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StrategySpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl TryFrom<String> for StrategySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategySpec> for String {
    fn from(spec: StrategySpec) -> String {
        spec.to_string()
    }
}

impl StrategySpec {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    /// Reads parameter `key`, falling back to `default`.
    pub fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    /// Rejects parameter keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::invalid(format!(
                    "strategy `{}` has no parameter `{}` (allowed: {})",
                    self.name,
                    key,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        let mut sep = ':';
        for (k, v) in &self.params {
            write!(f, "{sep}{k}={v}")?;
            sep = ',';
        }
        Ok(())
    }
}

/// Parses `name` or `name:key=value,key=value`.
impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r)),
            None => (s.trim(), None),
        };
        if name.is_empty() {
            return Err(Error::invalid("empty strategy name"));
        }
        let mut spec = StrategySpec::named(name);
        if let Some(rest) = rest {
            for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("expected key=value, got `{pair}`")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("parameter `{k}` is not a number: `{v}`")))?;
                spec.params.insert(k.trim().to_string(), v);
            }
        }
        Ok(spec)
    }
}

type Factory<T> = Box<dyn Fn(&StrategySpec) -> Result<Box<T>> + Send + Sync>;

struct Entry<T: ?Sized> {
    description: &'static str,
    factory: Factory<T>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn register<F>(&mut self, name: &str, description: &'static str, factory: F)
    where
        F: Fn(&StrategySpec) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(
            name.to_string(),
            Entry {
                description,
                factory: Box::new(factory),
            },
        );
    }

    pub fn create(&self, spec: &StrategySpec) -> Result<Box<T>> {
        match self.entries.get(&spec.name) {
            Some(entry) => (entry.factory)(spec),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: spec.name.clone(),
                known: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    /// `(name, description)` pairs in name order.
    pub fn describe(&self) -> Vec<(&str, &'static str)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.as_str(), e.description))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Shape: Send + Sync {
        fn area(&self) -> f64;
    }

    struct Square(f64);
    impl Shape for Square {
        fn area(&self) -> f64 {
            self.0 * self.0
        }
    }

    #[test]
    fn parses_name_and_params() {
        let spec: StrategySpec = "lanczos:krylov_dim=60,tol=1e-12".parse().unwrap();
        assert_eq!(spec.name, "lanczos");
        assert_eq!(spec.param("krylov_dim", 0.0), 60.0);
        assert_eq!(spec.param("tol", 0.0), 1e-12);
        assert_eq!(spec.param("missing", 3.0), 3.0);
        let back: StrategySpec = spec.to_string().parse().unwrap();
        assert_eq!(back, spec);
        assert!("dense".parse::<StrategySpec>().unwrap().params.is_empty());
        assert!("x:k".parse::<StrategySpec>().is_err());
        assert!(":k=1".parse::<StrategySpec>().is_err());
    }

    #[test]
    fn creates_by_name_and_reports_unknown() {
        let mut reg: Registry<dyn Shape> = Registry::new("shape");
        reg.register("square", "a square", |spec| {
            spec.check_keys(&["side"])?;
            Ok(Box::new(Square(spec.param("side", 1.0))))
        });
        let s = reg.create(&StrategySpec::named("square").with("side", 3.0)).unwrap();
        assert_eq!(s.area(), 9.0);
        assert!(reg.create(&StrategySpec::named("square").with("radius", 1.0)).is_err());
        let err = reg.create(&StrategySpec::named("circle")).err().unwrap();
        assert!(err.to_string().contains("square"));
        assert_eq!(reg.names(), vec!["square"]);
    }
}
