//! Attribute values and semantic types.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde_json::{Map, Number, Value as Json};

/// Opaque object identifier.
pub type Oid = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scalar {
    Boolean,
    Short,
    UnsignedShort,
    Long,
    Float,
    Double,
    String,
}

impl Scalar {
    pub fn name(&self) -> &'static str {
        match self {
            Scalar::Boolean => "Boolean",
            Scalar::Short => "Short",
            Scalar::UnsignedShort => "Unsigned Short",
            Scalar::Long => "Long",
            Scalar::Float => "Float",
            Scalar::Double => "Double",
            Scalar::String => "String",
        }
    }

    pub fn from_name(name: &str) -> Option<Scalar> {
        Some(match name {
            "Boolean" | "boolean" => Scalar::Boolean,
            "Short" | "short" | "integer" | "Integer" => Scalar::Short,
            "Long" | "long" => Scalar::Long,
            "Float" | "float" | "real" => Scalar::Float,
            "Double" | "double" => Scalar::Double,
            "String" | "string" => Scalar::String,
            _ => return None,
        })
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Scalar::Boolean | Scalar::String)
    }

    pub fn is_integral(&self) -> bool {
        matches!(self, Scalar::Short | Scalar::UnsignedShort | Scalar::Long)
    }
}

/// Structural type of a property.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemType {
    Scalar(Scalar),
    Struct { name: Option<String>, fields: Vec<(String, SemType)> },
    Set(Box<SemType>),
    List(Box<SemType>),
    Ref(String),
    /// Type not known statically (e.g. values read without a schema).
    Any,
}

impl SemType {
    pub fn string() -> Self {
        SemType::Scalar(Scalar::String)
    }

    pub fn is_collection(&self) -> bool {
        matches!(self, SemType::Set(_) | SemType::List(_))
    }

    pub fn element(&self) -> Option<&SemType> {
        match self {
            SemType::Set(t) | SemType::List(t) => Some(t),
            _ => None,
        }
    }

    pub fn struct_fields(&self) -> Option<&[(String, SemType)]> {
        match self {
            SemType::Struct { fields, .. } => Some(fields),
            _ => None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&SemType> {
        self.struct_fields()?.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Resolve a dotted path through nested structs.
    pub fn path(&self, segments: &[String]) -> Option<&SemType> {
        let mut ty = self;
        for s in segments {
            ty = ty.field(s)?;
        }
        Some(ty)
    }

    /// Target class of a relationship type (single or collection).
    pub fn ref_target(&self) -> Option<&str> {
        match self {
            SemType::Ref(c) => Some(c),
            SemType::Set(t) | SemType::List(t) => t.ref_target(),
            _ => None,
        }
    }

    /// Leaf paths of nested structs, `""` for non-struct types.
    pub fn leaf_paths(&self) -> Vec<String> {
        match self {
            SemType::Struct { fields, .. } => fields
                .iter()
                .flat_map(|(n, t)| {
                    t.leaf_paths().into_iter().map(move |p| {
                        if p.is_empty() {
                            n.clone()
                        } else {
                            format!("{n}.{p}")
                        }
                    })
                })
                .collect(),
            _ => vec![String::new()],
        }
    }
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemType::Scalar(s) => f.write_str(s.name()),
            SemType::Struct { name, fields } => {
                f.write_str("Struct")?;
                if let Some(n) = name {
                    write!(f, " {n}")?;
                }
                f.write_str(" {")?;
                for (k, (n, t)) in fields.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t} {n}")?;
                }
                f.write_str("}")
            }
            SemType::Set(t) => write!(f, "Set<{t}>"),
            SemType::List(t) => write!(f, "List<{t}>"),
            SemType::Ref(c) => f.write_str(c),
            SemType::Any => f.write_str("Any"),
        }
    }
}

/// A runtime value. `Set` members are kept sorted and deduplicated.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Struct(BTreeMap<String, Value>),
    Set(Vec<Value>),
    List(Vec<Value>),
    Ref(Oid),
}

impl Value {
    pub fn set(mut members: Vec<Value>) -> Value {
        members.sort();
        members.dedup();
        Value::Set(members)
    }

    pub fn text(s: impl Into<String>) -> Value {
        Value::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_struct(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Struct(m) => Some(m),
            _ => None,
        }
    }

    pub fn members(&self) -> Option<&[Value]> {
        match self {
            Value::Set(v) | Value::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        self.as_struct()?.get(name)
    }

    pub fn path(&self, segments: &[String]) -> Option<&Value> {
        let mut v = self;
        for s in segments {
            v = v.field(s)?;
        }
        Some(v)
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Float(_) => 2,
            Value::Text(_) => 3,
            Value::Ref(_) => 4,
            Value::Struct(_) => 5,
            Value::Set(_) => 6,
            Value::List(_) => 7,
        }
    }

    /// Ordering used by predicates: only scalars of compatible kinds compare.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Ref(a), Value::Ref(b)) => Some(a.cmp(b)),
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (a, b) => a.as_f64()?.partial_cmp(&b.as_f64()?),
        }
    }

    /// Schema-free JSON encoding.
    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::Number((*i).into()),
            Value::Float(x) => Number::from_f64(*x).map(Json::Number).unwrap_or(Json::Null),
            Value::Text(s) | Value::Ref(s) => Json::String(s.clone()),
            Value::Struct(m) => {
                Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect::<Map<_, _>>())
            }
            Value::Set(v) | Value::List(v) => Json::Array(v.iter().map(Value::to_json).collect()),
        }
    }

    /// Type-directed JSON decoding.
    pub fn from_json(json: &Json, ty: &SemType) -> Result<Value, String> {
        let mismatch = || format!("value {json} does not match type {ty}");
        Ok(match (ty, json) {
            (_, Json::Null) => Value::Null,
            (SemType::Scalar(Scalar::Boolean), Json::Bool(b)) => Value::Bool(*b),
            (SemType::Scalar(Scalar::String), Json::String(s)) => Value::Text(s.clone()),
            (SemType::Scalar(s), Json::Number(n)) if s.is_numeric() => {
                if s.is_integral() {
                    Value::Int(n.as_i64().ok_or_else(mismatch)?)
                } else {
                    Value::Float(n.as_f64().ok_or_else(mismatch)?)
                }
            }
            (SemType::Ref(_), Json::String(s)) => Value::Ref(s.clone()),
            (SemType::Set(t), Json::Array(items)) => Value::set(
                items.iter().map(|i| Value::from_json(i, t)).collect::<Result<_, _>>()?,
            ),
            (SemType::List(t), Json::Array(items)) => Value::List(
                items.iter().map(|i| Value::from_json(i, t)).collect::<Result<_, _>>()?,
            ),
            (SemType::Struct { fields, .. }, Json::Object(obj)) => {
                let mut out = BTreeMap::new();
                for (name, fty) in fields {
                    let v = obj.get(name).unwrap_or(&Json::Null);
                    out.insert(name.clone(), Value::from_json(v, fty)?);
                }
                if let Some(extra) = obj.keys().find(|k| !fields.iter().any(|(n, _)| n == *k)) {
                    return Err(format!("unexpected field `{extra}` for type {ty}"));
                }
                Value::Struct(out)
            }
            (SemType::Any, j) => Value::from_json_untyped(j),
            _ => return Err(mismatch()),
        })
    }

    pub fn from_json_untyped(json: &Json) -> Value {
        match json {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => match n.as_i64() {
                Some(i) if !n.is_f64() => Value::Int(i),
                _ => Value::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            Json::String(s) => Value::Text(s.clone()),
            Json::Array(items) => Value::List(items.iter().map(Value::from_json_untyped).collect()),
            Json::Object(obj) => Value::Struct(
                obj.iter().map(|(k, v)| (k.clone(), Value::from_json_untyped(v))).collect(),
            ),
        }
    }

    /// Does the value inhabit the type? Null inhabits every type.
    pub fn conforms(&self, ty: &SemType) -> bool {
        match (self, ty) {
            (Value::Null, _) | (_, SemType::Any) => true,
            (Value::Bool(_), SemType::Scalar(Scalar::Boolean)) => true,
            (Value::Text(_), SemType::Scalar(Scalar::String)) => true,
            (Value::Int(_), SemType::Scalar(s)) => s.is_numeric(),
            (Value::Float(_), SemType::Scalar(s)) => s.is_numeric() && !s.is_integral(),
            (Value::Ref(_), SemType::Ref(_)) => true,
            (Value::Set(v), SemType::Set(t)) | (Value::List(v), SemType::List(t)) => {
                v.iter().all(|m| m.conforms(t))
            }
            (Value::Struct(m), SemType::Struct { fields, .. }) => {
                m.len() == fields.len()
                    && fields.iter().all(|(n, t)| m.get(n).is_some_and(|v| v.conforms(t)))
            }
            _ => false,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Int(a), Value::Float(b)) => (*a as f64).total_cmp(b).then(Ordering::Less),
            (Value::Float(a), Value::Int(b)) => a.total_cmp(&(*b as f64)).then(Ordering::Greater),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) | (Value::Ref(a), Value::Ref(b)) => a.cmp(b),
            (Value::Struct(a), Value::Struct(b)) => a.cmp(b),
            (Value::Set(a), Value::Set(b)) | (Value::List(a), Value::List(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Bool(b) => b.hash(state),
            Value::Int(i) => i.hash(state),
            Value::Float(x) => x.to_bits().hash(state),
            Value::Text(s) | Value::Ref(s) => s.hash(state),
            Value::Struct(m) => m.hash(state),
            Value::Set(v) | Value::List(v) => v.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Ref(o) => write!(f, "@{o}"),
            Value::Struct(m) => {
                f.write_str("{")?;
                for (k, (n, v)) in m.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{n}: {v}")?;
                }
                f.write_str("}")
            }
            Value::Set(v) | Value::List(v) => {
                f.write_str(if matches!(self, Value::Set(_)) { "{{" } else { "[" })?;
                for (k, m) in v.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{m}")?;
                }
                f.write_str(if matches!(self, Value::Set(_)) { "}}" } else { "]" })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_dedups_structurally() {
        let s = Value::set(vec![Value::Int(2), Value::Int(1), Value::Int(2)]);
        assert_eq!(s, Value::Set(vec![Value::Int(1), Value::Int(2)]));
    }

    #[test]
    fn int_and_float_are_distinct_but_ordered() {
        assert_ne!(Value::Int(1), Value::Float(1.0));
        assert!(Value::Int(1) < Value::Float(1.5));
        assert_eq!(Value::Int(3).compare(&Value::Float(3.0)), Some(Ordering::Equal));
        assert_eq!(Value::Null.compare(&Value::Null), None);
    }

    #[test]
    fn typed_json_round_trip() {
        let ty = SemType::Struct {
            name: None,
            fields: vec![
                ("n".into(), SemType::Scalar(Scalar::Short)),
                ("x".into(), SemType::Scalar(Scalar::Double)),
                ("kids".into(), SemType::Set(Box::new(SemType::Ref("P".into())))),
            ],
        };
        let json: Json = serde_json::json!({"n": 3, "x": 2.0, "kids": ["b", "a"]});
        let v = Value::from_json(&json, &ty).unwrap();
        assert!(v.conforms(&ty));
        assert_eq!(v.field("kids").unwrap().members().unwrap()[0], Value::Ref("a".into()));
        assert_eq!(Value::from_json(&v.to_json(), &ty).unwrap(), v);
        assert!(Value::from_json(&serde_json::json!({"n": "x"}), &ty).is_err());
    }

    #[test]
    fn leaf_paths_expand_structs() {
        let ty = SemType::Struct {
            name: Some("T".into()),
            fields: vec![
                ("max".into(), SemType::Scalar(Scalar::Short)),
                ("min".into(), SemType::Scalar(Scalar::Short)),
            ],
        };
        assert_eq!(ty.leaf_paths(), vec!["max", "min"]);
        assert_eq!(SemType::string().leaf_paths(), vec![""]);
    }
}
