//! JSON documents: source snapshots, warehouse stores and tick scripts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path as FsPath, PathBuf};

use serde::Deserialize;
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::algebra::{SourceObject, SourceSnapshot};
use crate::dsl::{parse_schema, print_schema, schema_hash};
use crate::model::{ClassExtent, State, WarehouseObject, WarehouseStore};
use crate::refresh::RefreshTick;
use crate::schema::{PropertyKind, WarehouseSchema};
use crate::temporal::{Instant, TemporalDomain};
use crate::value::{Scalar, SemType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed document: {0}")]
    Format(String),
    #[error("store was built for schema {found}, current schema is {expected}")]
    SchemaMismatch { expected: String, found: String },
    #[error("dangling reference `{oid}` in {class}.{property} of `{owner}`")]
    DanglingRef { oid: String, owner: String, class: String, property: String },
    #[error("`{owner}`.{property} points to `{target}` but `{target}`.{inverse} does not point back")]
    InverseMismatch { owner: String, property: String, target: String, inverse: String },
    #[error("unknown source class `{0}`")]
    UnknownClass(String),
    #[error("unknown property `{property}` on `{owner}`")]
    UnknownProperty { owner: String, property: String },
    #[error("duplicate oid `{0}`")]
    DuplicateOid(String),
    #[error("`{owner}`.{property}: expected {expected}")]
    TypeMismatch { owner: String, property: String, expected: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

pub fn read_file(path: &FsPath) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| IoError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn write_file(path: &FsPath, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| IoError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn parse_json(text: &str) -> Result<Json> {
    serde_json::from_str(text).map_err(|e| IoError::Format(e.to_string()))
}

fn pretty(j: &Json) -> String {
    let mut s = serde_json::to_string_pretty(j).expect("json values always serialize");
    s.push('\n');
    s
}

fn instant(text: &str) -> Result<Instant> {
    text.parse().map_err(|e| IoError::Format(format!("{e}")))
}

// ---------------------------------------------------------------------------
// Snapshots

/// Decode a snapshot, typing each property by the schema and checking references.
pub fn parse_snapshot(schema: &WarehouseSchema, text: &str) -> Result<SourceSnapshot> {
    let doc = parse_json(text)?;
    let Json::Object(root) = doc else { return Err(IoError::Format("snapshot must be an object".into())) };
    let at = match root.get("at") {
        None | Some(Json::Null) => None,
        Some(Json::String(s)) => Some(instant(s)?),
        Some(_) => return Err(IoError::Format("`at` must be an instant string".into())),
    };
    let mut snapshot = SourceSnapshot { at, classes: BTreeMap::new() };
    let classes = match root.get("classes") {
        None => return Ok(snapshot),
        Some(Json::Object(m)) => m,
        Some(_) => return Err(IoError::Format("`classes` must be an object".into())),
    };
    let mut seen = BTreeSet::new();
    for (class, objects) in classes {
        if schema.source(class).is_none() {
            return Err(IoError::UnknownClass(class.clone()));
        }
        let props = schema.flattened_properties(class);
        let Json::Array(objects) = objects else {
            return Err(IoError::Format(format!("`{class}` must list objects")));
        };
        let mut out = Vec::new();
        for o in objects {
            let Json::Object(fields) = o else { return Err(IoError::Format(format!("`{class}` entries must be objects"))) };
            let Some(Json::String(oid)) = fields.get("oid") else {
                return Err(IoError::Format(format!("`{class}` entry without a string oid")));
            };
            if !seen.insert(oid.clone()) {
                return Err(IoError::DuplicateOid(oid.clone()));
            }
            for k in fields.keys() {
                if k != "oid" && !props.iter().any(|(_, p)| p.name == *k) {
                    return Err(IoError::UnknownProperty { owner: oid.clone(), property: k.clone() });
                }
            }
            let mut values = BTreeMap::new();
            for (_, p) in &props {
                let v = match fields.get(&p.name) {
                    None => Value::Null,
                    Some(j) => decode_typed(j, &p.ty).ok_or_else(|| IoError::TypeMismatch {
                        owner: oid.clone(),
                        property: p.name.clone(),
                        expected: p.ty.to_string(),
                    })?,
                };
                values.insert(p.name.clone(), v);
            }
            out.push(SourceObject { oid: oid.clone(), values });
        }
        snapshot.classes.insert(class.clone(), out);
    }
    check_references(schema, &snapshot)?;
    Ok(snapshot)
}

fn decode_typed(j: &Json, ty: &SemType) -> Option<Value> {
    if j.is_null() {
        return Some(Value::Null);
    }
    Some(match ty {
        SemType::Scalar(Scalar::Boolean) => Value::Bool(j.as_bool()?),
        SemType::Scalar(Scalar::String) => Value::Text(j.as_str()?.to_string()),
        SemType::Scalar(s) if s.is_integral() => Value::Int(j.as_i64()?),
        SemType::Scalar(_) => Value::Float(j.as_f64()?),
        SemType::Ref(_) => Value::Ref(j.as_str()?.to_string()),
        SemType::Set(t) => Value::set(j.as_array()?.iter().map(|x| decode_typed(x, t)).collect::<Option<Vec<_>>>()?),
        SemType::List(t) => Value::List(j.as_array()?.iter().map(|x| decode_typed(x, t)).collect::<Option<Vec<_>>>()?),
        SemType::Struct { fields, .. } => {
            let m = j.as_object()?;
            if m.keys().any(|k| !fields.iter().any(|(f, _)| f == k)) {
                return None;
            }
            let mut out = BTreeMap::new();
            for (f, t) in fields {
                out.insert(f.clone(), m.get(f).map_or(Some(Value::Null), |x| decode_typed(x, t))?);
            }
            Value::Struct(out)
        }
        SemType::Any => decode_plain(j),
    })
}

fn decode_plain(j: &Json) -> Value {
    match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => n.as_i64().map_or_else(|| Value::Float(n.as_f64().unwrap_or(f64::NAN)), Value::Int),
        Json::String(s) => Value::Text(s.clone()),
        Json::Array(a) => Value::List(a.iter().map(decode_plain).collect()),
        Json::Object(m) => Value::Struct(m.iter().map(|(k, v)| (k.clone(), decode_plain(v))).collect()),
    }
}

fn refs_in(v: &Value) -> Vec<&str> {
    match v {
        Value::Ref(o) => vec![o.as_str()],
        Value::Set(xs) | Value::List(xs) => xs.iter().flat_map(refs_in).collect(),
        _ => vec![],
    }
}

fn check_references(schema: &WarehouseSchema, snapshot: &SourceSnapshot) -> Result<()> {
    let mut index: BTreeMap<&str, (&str, &SourceObject)> = BTreeMap::new();
    for (class, objects) in &snapshot.classes {
        for o in objects {
            index.insert(&o.oid, (class, o));
        }
    }
    for (class, objects) in &snapshot.classes {
        let props = schema.flattened_properties(class);
        for o in objects {
            for (defining, p) in &props {
                let PropertyKind::Relationship { inverse } = &p.kind else { continue };
                for target in refs_in(&o.values[&p.name]) {
                    let Some((tclass, t)) = index.get(target) else {
                        return Err(IoError::DanglingRef {
                            oid: target.to_string(),
                            owner: o.oid.clone(),
                            class: defining.clone(),
                            property: p.name.clone(),
                        });
                    };
                    if let Some(expected) = ref_target(&p.ty) {
                        let fits = *tclass == expected || schema.source_ancestors(tclass).iter().any(|a| a == expected);
                        if !fits {
                            return Err(IoError::TypeMismatch {
                                owner: o.oid.clone(),
                                property: p.name.clone(),
                                expected: format!("a {expected} object, `{target}` is a {tclass}"),
                            });
                        }
                    }
                    if let Some((_, q)) = inverse {
                        let back = t.values.get(q).map(refs_in).unwrap_or_default();
                        if !back.contains(&o.oid.as_str()) {
                            return Err(IoError::InverseMismatch {
                                owner: o.oid.clone(),
                                property: p.name.clone(),
                                target: target.to_string(),
                                inverse: q.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn ref_target(ty: &SemType) -> Option<&str> {
    match ty {
        SemType::Ref(c) => Some(c),
        SemType::Set(t) | SemType::List(t) => ref_target(t),
        _ => None,
    }
}

pub fn load_snapshot(schema: &WarehouseSchema, path: &FsPath) -> Result<SourceSnapshot> {
    parse_snapshot(schema, &read_file(path)?)
}

/// Encode a snapshot in the same shape `parse_snapshot` reads.
pub fn snapshot_to_json(snapshot: &SourceSnapshot) -> String {
    let mut classes = Map::new();
    for (class, objects) in &snapshot.classes {
        let list: Vec<Json> = objects
            .iter()
            .map(|o| {
                let mut m = Map::new();
                m.insert("oid".into(), Json::String(o.oid.clone()));
                for (k, v) in &o.values {
                    if !matches!(v, Value::Null) {
                        m.insert(k.clone(), encode_plain(v));
                    }
                }
                Json::Object(m)
            })
            .collect();
        classes.insert(class.clone(), Json::Array(list));
    }
    let mut root = Map::new();
    if let Some(at) = snapshot.at {
        root.insert("at".into(), Json::String(at.to_string()));
    }
    root.insert("classes".into(), Json::Object(classes));
    pretty(&Json::Object(root))
}

fn encode_plain(v: &Value) -> Json {
    match v {
        Value::Null => Json::Null,
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => json!(i),
        Value::Float(x) => float(*x),
        Value::Text(s) | Value::Ref(s) => Json::String(s.clone()),
        Value::Set(xs) | Value::List(xs) => Json::Array(xs.iter().map(encode_plain).collect()),
        Value::Struct(m) => Json::Object(m.iter().map(|(k, v)| (k.clone(), encode_plain(v))).collect()),
    }
}

fn float(x: f64) -> Json {
    serde_json::Number::from_f64(x).map_or(Json::Null, Json::Number)
}

// ---------------------------------------------------------------------------
// Stores

/// Lossless value encoding: refs, sets and structs are tagged.
fn encode_value(v: &Value) -> Json {
    match v {
        Value::Null => Json::Null,
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => json!(i),
        Value::Float(x) => float(*x),
        Value::Text(s) => Json::String(s.clone()),
        Value::Ref(o) => json!({ "ref": o }),
        Value::List(xs) => Json::Array(xs.iter().map(encode_value).collect()),
        Value::Set(xs) => json!({ "set": xs.iter().map(encode_value).collect::<Vec<_>>() }),
        Value::Struct(m) => {
            json!({ "struct": m.iter().map(|(k, v)| (k.clone(), encode_value(v))).collect::<Map<_, _>>() })
        }
    }
}

fn decode_value(j: &Json) -> Result<Value> {
    Ok(match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) if n.is_i64() => Value::Int(n.as_i64().unwrap_or_default()),
        Json::Number(n) => Value::Float(n.as_f64().ok_or_else(|| IoError::Format(format!("bad number {n}")))?),
        Json::String(s) => Value::Text(s.clone()),
        Json::Array(xs) => Value::List(xs.iter().map(decode_value).collect::<Result<_>>()?),
        Json::Object(m) if m.len() == 1 => match m.iter().next() {
            Some((k, Json::String(o))) if k == "ref" => Value::Ref(o.clone()),
            Some((k, Json::Array(xs))) if k == "set" => Value::set(xs.iter().map(decode_value).collect::<Result<_>>()?),
            Some((k, Json::Object(fs))) if k == "struct" => Value::Struct(
                fs.iter().map(|(k, v)| Ok((k.clone(), decode_value(v)?))).collect::<Result<_>>()?,
            ),
            _ => return Err(IoError::Format(format!("unknown tagged value {j}"))),
        },
        Json::Object(_) => return Err(IoError::Format(format!("unknown tagged value {j}"))),
    })
}

fn encode_state(s: &State) -> Json {
    json!({
        "domain": s.domain.to_string(),
        "value": s.value.iter().map(|(k, v)| (k.clone(), encode_value(v))).collect::<Map<_, _>>(),
    })
}

fn field<'a>(m: &'a Map<String, Json>, k: &str) -> Result<&'a Json> {
    m.get(k).ok_or_else(|| IoError::Format(format!("missing `{k}`")))
}

fn decode_state(j: &Json) -> Result<State> {
    let m = j.as_object().ok_or_else(|| IoError::Format("state must be an object".into()))?;
    let domain: TemporalDomain = field(m, "domain")?
        .as_str()
        .ok_or_else(|| IoError::Format("domain must be a string".into()))?
        .parse()
        .map_err(|e| IoError::Format(format!("{e}")))?;
    let value = field(m, "value")?
        .as_object()
        .ok_or_else(|| IoError::Format("state value must be an object".into()))?
        .iter()
        .map(|(k, v)| Ok((k.clone(), decode_value(v)?)))
        .collect::<Result<_>>()?;
    Ok(State { value, domain })
}

fn decode_states(j: &Json) -> Result<Vec<State>> {
    j.as_array().ok_or_else(|| IoError::Format("states must be a list".into()))?.iter().map(decode_state).collect()
}

/// Encode a store; with `schema`, its canonical text is embedded so the store is
/// self-contained.
pub fn store_to_json(store: &WarehouseStore, schema: Option<&WarehouseSchema>) -> String {
    let classes: Map<String, Json> = store
        .classes
        .iter()
        .map(|(c, extent)| {
            let objects: Vec<Json> = extent
                .objects
                .iter()
                .map(|o| {
                    json!({
                        "oid": o.oid,
                        "lineage_key": encode_value(&o.lineage_key),
                        "current": o.current.as_ref().map_or(Json::Null, encode_state),
                        "past": o.past.iter().map(encode_state).collect::<Vec<_>>(),
                        "archived": o.archived.iter().map(encode_state).collect::<Vec<_>>(),
                    })
                })
                .collect();
            (c.clone(), Json::Array(objects))
        })
        .collect();
    let ticks: Map<String, Json> =
        store.last_tick.iter().map(|(e, t)| (e.clone(), Json::String(t.to_string()))).collect();
    let mut doc = json!({
        "schema_hash": store.schema_hash,
        "next_oid": store.next_oid,
        "last_tick": ticks,
        "classes": classes,
    });
    if let (Some(s), Json::Object(m)) = (schema, &mut doc) {
        m.insert("schema".into(), Json::String(print_schema(s)));
    }
    pretty(&doc)
}

/// The schema embedded in a store document, checked against its hash.
pub fn embedded_schema(text: &str) -> Result<Option<WarehouseSchema>> {
    let doc = parse_json(text)?;
    let root = doc.as_object().ok_or_else(|| IoError::Format("store must be an object".into()))?;
    let Some(src) = root.get("schema") else { return Ok(None) };
    let src = src.as_str().ok_or_else(|| IoError::Format("schema must be a string".into()))?;
    let schema = parse_schema(src).map_err(|e| IoError::Format(format!("embedded schema: {e}")))?;
    let found = field(root, "schema_hash")?.as_str().unwrap_or_default().to_string();
    let expected = schema_hash(&schema);
    if expected != found {
        return Err(IoError::SchemaMismatch { expected, found });
    }
    Ok(Some(schema))
}

/// Decode a store; with `expected_hash`, refuse stores built for another schema.
pub fn parse_store(text: &str, expected_hash: Option<&str>) -> Result<WarehouseStore> {
    let doc = parse_json(text)?;
    let root = doc.as_object().ok_or_else(|| IoError::Format("store must be an object".into()))?;
    let schema_hash = field(root, "schema_hash")?
        .as_str()
        .ok_or_else(|| IoError::Format("schema_hash must be a string".into()))?
        .to_string();
    if let Some(h) = expected_hash {
        if h != schema_hash {
            return Err(IoError::SchemaMismatch { expected: h.to_string(), found: schema_hash });
        }
    }
    let next_oid = field(root, "next_oid")?.as_u64().ok_or_else(|| IoError::Format("next_oid must be a count".into()))?;
    let mut last_tick = BTreeMap::new();
    for (e, t) in field(root, "last_tick")?.as_object().ok_or_else(|| IoError::Format("last_tick must be an object".into()))? {
        let t = t.as_str().ok_or_else(|| IoError::Format("tick must be a string".into()))?;
        last_tick.insert(e.clone(), instant(t)?);
    }
    let mut classes = BTreeMap::new();
    for (c, objs) in field(root, "classes")?.as_object().ok_or_else(|| IoError::Format("classes must be an object".into()))? {
        let mut extent = ClassExtent::default();
        for o in objs.as_array().ok_or_else(|| IoError::Format(format!("`{c}` must list objects")))? {
            let m = o.as_object().ok_or_else(|| IoError::Format("object must be a map".into()))?;
            let current = match field(m, "current")? {
                Json::Null => None,
                j => Some(decode_state(j)?),
            };
            extent.objects.push(WarehouseObject {
                oid: field(m, "oid")?.as_str().ok_or_else(|| IoError::Format("oid must be a string".into()))?.to_string(),
                lineage_key: decode_value(field(m, "lineage_key")?)?,
                current,
                past: decode_states(field(m, "past")?)?,
                archived: decode_states(field(m, "archived")?)?,
            });
        }
        classes.insert(c.clone(), extent);
    }
    Ok(WarehouseStore { schema_hash, next_oid, last_tick, classes })
}

pub fn save_store(store: &WarehouseStore, schema: Option<&WarehouseSchema>, path: &FsPath) -> Result<()> {
    write_file(path, &store_to_json(store, schema))
}

pub fn load_store(path: &FsPath, expected_hash: Option<&str>) -> Result<WarehouseStore> {
    parse_store(&read_file(path)?, expected_hash)
}

// ---------------------------------------------------------------------------
// Tick scripts

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TickEntry {
    at: String,
    #[serde(alias = "snapshot_path")]
    snapshot: String,
    #[serde(default)]
    environment: Option<String>,
    #[serde(default)]
    archive: bool,
}

/// Read a tick script; snapshot paths are relative to the script's directory.
pub fn load_tickscript(schema: &WarehouseSchema, path: &FsPath) -> Result<Vec<RefreshTick>> {
    let text = read_file(path)?;
    let entries: Vec<TickEntry> = serde_json::from_str(&text).map_err(|e| IoError::Format(e.to_string()))?;
    let base = path.parent().map(FsPath::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    entries
        .into_iter()
        .map(|e| {
            Ok(RefreshTick {
                at: instant(&e.at)?,
                environment: e.environment,
                snapshot: load_snapshot(schema, &base.join(&e.snapshot))?,
                archive: e.archive,
            })
        })
        .collect()
}
