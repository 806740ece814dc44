//! Warehouse objects, their states, and the object store.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::catalog::WarehouseClass;
use crate::temporal::{Instant, TemporalDomain, TemporalError};
use crate::value::{Oid, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
}

/// A value together with the instants during which it held.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub value: BTreeMap<String, Value>,
    pub domain: TemporalDomain,
}

impl State {
    pub fn new(value: BTreeMap<String, Value>, domain: TemporalDomain) -> Self {
        State { value, domain }
    }

    pub fn get(&self, prop: &str) -> Value {
        self.value.get(prop).cloned().unwrap_or(Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarehouseObject {
    pub oid: Oid,
    pub lineage_key: Value,
    /// `None` once the object has disappeared from the source.
    pub current: Option<State>,
    pub past: Vec<State>,
    pub archived: Vec<State>,
}

impl WarehouseObject {
    pub fn is_active(&self) -> bool {
        self.current.is_some()
    }

    /// The current or past state holding at `t`. Archived states are not considered.
    pub fn state_at(&self, t: Instant) -> Result<Option<&State>, ModelError> {
        for s in self.current.iter().chain(self.past.iter()) {
            if let Some(u) = s.domain.unit() {
                if u != t.unit() {
                    return Err(TemporalError::MixedUnits(u, t.unit()).into());
                }
            }
            if s.domain.contains(t) {
                return Ok(Some(s));
            }
        }
        Ok(None)
    }

    /// `(domain, value)` pairs of one property, oldest first. Non-temporal
    /// properties only have a current value.
    pub fn history(&self, class: &WarehouseClass, prop: &str) -> Result<Vec<(TemporalDomain, Value)>, ModelError> {
        if class.field(prop).is_none() {
            return Err(ModelError::UnknownProperty(prop.to_string()));
        }
        let mut out = Vec::new();
        if class.is_temporal(prop) {
            out.extend(self.past.iter().map(|s| (s.domain.clone(), s.get(prop))));
        }
        out.extend(self.current.iter().map(|s| (s.domain.clone(), s.get(prop))));
        Ok(out)
    }
}

pub fn state_at(o: &WarehouseObject, t: Instant) -> Result<Option<&State>, ModelError> {
    o.state_at(t)
}

pub fn history(o: &WarehouseObject, class: &WarehouseClass, prop: &str) -> Result<Vec<(TemporalDomain, Value)>, ModelError> {
    o.history(class, prop)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassExtent {
    pub objects: Vec<WarehouseObject>,
}

/// Global refresh bookkeeping key for classes outside every environment.
pub const GLOBAL_ENV: &str = "";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WarehouseStore {
    pub schema_hash: String,
    pub next_oid: u64,
    /// Last refresh instant per environment name (`""` for the global one).
    pub last_tick: BTreeMap<String, Instant>,
    pub classes: BTreeMap<String, ClassExtent>,
}

impl WarehouseStore {
    pub fn new(schema_hash: impl Into<String>) -> Self {
        WarehouseStore { schema_hash: schema_hash.into(), next_oid: 1, ..Default::default() }
    }

    pub fn fresh_oid(&mut self, class: &str) -> Oid {
        let oid = format!("{class}#{}", self.next_oid);
        self.next_oid += 1;
        oid
    }

    pub fn extent(&self, class: &str) -> Result<&ClassExtent, ModelError> {
        self.classes.get(class).ok_or_else(|| ModelError::UnknownClass(class.to_string()))
    }

    pub fn object(&self, class: &str, oid: &str) -> Result<&WarehouseObject, ModelError> {
        self.extent(class)?
            .objects
            .iter()
            .find(|o| o.oid == oid)
            .ok_or_else(|| ModelError::UnknownObject(oid.to_string()))
    }

    pub fn active_count(&self, class: &str) -> usize {
        self.classes.get(class).map_or(0, |e| e.objects.iter().filter(|o| o.is_active()).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{Interval, TemporalUnit};

    fn mois(t: i64) -> Instant {
        Instant::new(TemporalUnit::Mois, t)
    }

    fn dom(a: i64, b: i64) -> TemporalDomain {
        TemporalDomain::single(Interval::new(mois(a), mois(b)).unwrap())
    }

    fn val(n: i64) -> BTreeMap<String, Value> {
        BTreeMap::from([("n".to_string(), Value::Int(n))])
    }

    fn object() -> WarehouseObject {
        WarehouseObject {
            oid: "C#1".into(),
            lineage_key: Value::Ref("s1".into()),
            current: Some(State::new(val(3), TemporalDomain::from_now(mois(10)))),
            past: vec![State::new(val(1), dom(0, 3)), State::new(val(2), dom(6, 9))],
            archived: vec![],
        }
    }

    #[test]
    fn state_at_picks_the_covering_state() {
        let o = object();
        assert_eq!(o.state_at(mois(12)).unwrap().unwrap().get("n"), Value::Int(3));
        assert_eq!(o.state_at(mois(7)).unwrap().unwrap().get("n"), Value::Int(2));
        assert!(o.state_at(mois(4)).unwrap().is_none());
        assert!(o.state_at(Instant::new(TemporalUnit::Jour, 4)).is_err());
    }

    #[test]
    fn oids_are_prefixed_and_monotonic() {
        let mut s = WarehouseStore::new("h");
        assert_eq!(s.fresh_oid("Praticien"), "Praticien#1");
        assert_eq!(s.fresh_oid("Personne"), "Personne#2");
    }
}
