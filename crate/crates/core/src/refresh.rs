//! Initial population and periodic refresh of the warehouse.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::algebra::{EvalError, EvalResult, Row, SourceSnapshot};
use crate::archive::{apply_archive, ArchiveError, ArchiveReport, Weighting};
use crate::catalog::{Catalog, WarehouseClass};
use crate::model::{ClassExtent, State, WarehouseObject, WarehouseStore, GLOBAL_ENV};
use crate::temporal::{Instant, TemporalDomain, TemporalError};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefreshError {
    #[error("evaluating {class}: {error}")]
    Eval { class: String, error: EvalError },
    #[error("tick {at} does not follow the previous tick {last} of {env}")]
    NonMonotonicTick { env: String, last: Instant, at: Instant },
    #[error("tick {at} comes less than {period} after {last} for {env}")]
    ScheduleViolation { env: String, last: Instant, at: Instant, period: String },
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

pub type Result<T> = std::result::Result<T, RefreshError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefreshCounts {
    pub created: usize,
    /// Temporal properties changed: a past state was appended.
    pub historized: usize,
    /// Only non-temporal properties changed: current value overwritten.
    pub updated: usize,
    pub unchanged: usize,
    pub retired: usize,
    pub revived: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefreshReport {
    pub at: Instant,
    pub environment: Option<String>,
    pub classes: BTreeMap<String, RefreshCounts>,
    pub archive: Option<ArchiveReport>,
}

impl fmt::Display for RefreshReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.environment {
            Some(e) => writeln!(f, "tick {} ({e})", self.at)?,
            None => writeln!(f, "tick {}", self.at)?,
        }
        for (c, n) in &self.classes {
            writeln!(
                f,
                "  {c}: created {}, historized {}, updated {}, unchanged {}, retired {}, revived {}",
                n.created, n.historized, n.updated, n.unchanged, n.retired, n.revived
            )?;
        }
        if let Some(a) = &self.archive {
            for (c, n) in &a.classes {
                writeln!(f, "  archive {c}: consumed {}, produced {}", n.consumed, n.produced)?;
            }
        }
        Ok(())
    }
}

fn evaluate(catalog: &Catalog, snapshot: &SourceSnapshot) -> Result<BTreeMap<String, EvalResult>> {
    catalog.evaluate(snapshot).map_err(|(class, error)| RefreshError::Eval { class, error })
}

/// Rows with distinct lineage keys, first occurrence wins.
fn unique_rows(r: &EvalResult) -> Vec<&Row> {
    let mut seen = BTreeSet::new();
    r.objects.iter().filter(|row| seen.insert(&row.key)).collect()
}

fn temporal_part(class: &WarehouseClass, value: &BTreeMap<String, Value>) -> BTreeMap<String, Value> {
    class
        .tempo_filter
        .iter()
        .map(|p| (p.clone(), value.get(p).cloned().unwrap_or(Value::Null)))
        .collect()
}

/// Populate a new store from the snapshot at `t0`.
pub fn initial_build(
    catalog: &Catalog,
    snapshot: &SourceSnapshot,
    t0: Instant,
    schema_hash: &str,
) -> Result<WarehouseStore> {
    let results = evaluate(catalog, snapshot)?;
    let mut store = WarehouseStore::new(schema_hash);
    for name in &catalog.order {
        let mut extent = ClassExtent::default();
        for row in unique_rows(&results[name]) {
            extent.objects.push(WarehouseObject {
                oid: store.fresh_oid(name),
                lineage_key: row.key.clone(),
                current: Some(State::new(row.values.clone(), TemporalDomain::from_now(t0))),
                past: Vec::new(),
                archived: Vec::new(),
            });
        }
        store.classes.insert(name.clone(), extent);
    }
    store.last_tick.insert(GLOBAL_ENV.to_string(), t0);
    for e in &catalog.schema.environments {
        store.last_tick.insert(e.name.clone(), t0);
    }
    Ok(store)
}

/// Classes refreshed by a tick on `env` (`None`: classes outside every environment).
pub fn tick_classes(catalog: &Catalog, env: Option<&str>) -> Result<Vec<String>> {
    let schema = &catalog.schema;
    match env {
        Some(name) => {
            let e = schema.environment(name).ok_or_else(|| RefreshError::UnknownEnvironment(name.to_string()))?;
            Ok(catalog.order.iter().filter(|c| e.classes.contains(c)).cloned().collect())
        }
        None => Ok(catalog.order.iter().filter(|c| schema.environment_of(c).is_none()).cloned().collect()),
    }
}

fn refresh_class(
    class: &WarehouseClass,
    extent: &mut ClassExtent,
    result: &EvalResult,
    t: Instant,
    next_oid: &mut u64,
) -> Result<RefreshCounts> {
    let mut counts = RefreshCounts::default();
    let close = t.offset(-1);
    let mut index: BTreeMap<Value, usize> =
        extent.objects.iter().enumerate().map(|(k, o)| (o.lineage_key.clone(), k)).collect();
    let mut seen = BTreeSet::new();
    for row in unique_rows(result) {
        seen.insert(row.key.clone());
        let Some(&k) = index.get(&row.key) else {
            let oid = format!("{}#{}", class.name, *next_oid);
            *next_oid += 1;
            index.insert(row.key.clone(), extent.objects.len());
            extent.objects.push(WarehouseObject {
                oid,
                lineage_key: row.key.clone(),
                current: Some(State::new(row.values.clone(), TemporalDomain::from_now(t))),
                past: Vec::new(),
                archived: Vec::new(),
            });
            counts.created += 1;
            continue;
        };
        let o = &mut extent.objects[k];
        let Some(cur) = o.current.take() else {
            o.current = Some(State::new(row.values.clone(), TemporalDomain::from_now(t)));
            counts.revived += 1;
            continue;
        };
        if let Some(u) = cur.domain.unit() {
            if u != t.unit() {
                o.current = Some(cur);
                return Err(TemporalError::MixedUnits(u, t.unit()).into());
            }
        }
        if cur.value == row.values {
            o.current = Some(cur);
            counts.unchanged += 1;
        } else if temporal_part(class, &cur.value) != temporal_part(class, &row.values) {
            let closed = cur.domain.close_at(close)?;
            o.past.push(State::new(temporal_part(class, &cur.value), closed));
            o.current = Some(State::new(row.values.clone(), TemporalDomain::from_now(t)));
            counts.historized += 1;
        } else {
            o.current = Some(State::new(row.values.clone(), cur.domain));
            counts.updated += 1;
        }
    }
    for o in &mut extent.objects {
        if seen.contains(&o.lineage_key) {
            continue;
        }
        if let Some(cur) = o.current.take() {
            let closed = cur.domain.close_at(close)?;
            o.past.push(State::new(temporal_part(class, &cur.value), closed));
            counts.retired += 1;
        }
    }
    Ok(counts)
}

/// Re-evaluate the classes of one environment on a new snapshot at `t`.
pub fn refresh(
    catalog: &Catalog,
    store: &mut WarehouseStore,
    snapshot: &SourceSnapshot,
    t: Instant,
    env: Option<&str>,
) -> Result<RefreshReport> {
    let key = env.unwrap_or(GLOBAL_ENV).to_string();
    let classes = tick_classes(catalog, env)?;
    if let Some(last) = store.last_tick.get(&key) {
        if last.unit() != t.unit() {
            return Err(TemporalError::MixedUnits(last.unit(), t.unit()).into());
        }
        if t.ticks() <= last.ticks() {
            return Err(RefreshError::NonMonotonicTick { env: env_label(env), last: *last, at: t });
        }
    }
    let results = evaluate(catalog, snapshot)?;
    let mut staged = store.clone();
    let mut report = RefreshReport { at: t, environment: env.map(str::to_string), classes: BTreeMap::new(), archive: None };
    for name in &classes {
        let extent = staged.classes.entry(name.clone()).or_default();
        let counts = refresh_class(&catalog.classes[name], extent, &results[name], t, &mut staged.next_oid)?;
        report.classes.insert(name.clone(), counts);
    }
    staged.last_tick.insert(key, t);
    *store = staged;
    Ok(report)
}

fn env_label(env: Option<&str>) -> String {
    env.map_or_else(|| "the global schedule".to_string(), |e| format!("environment {e}"))
}

/// One scheduled refresh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefreshTick {
    pub at: Instant,
    pub environment: Option<String>,
    pub snapshot: SourceSnapshot,
    /// Run the environment's archiving after the refresh.
    pub archive: bool,
}

fn check_spacing(catalog: &Catalog, env: Option<&str>, last: Instant, at: Instant) -> Result<()> {
    let config = match env {
        Some(e) => catalog
            .schema
            .environment(e)
            .map(|e| e.config.refresh.or(catalog.schema.config.refresh))
            .ok_or_else(|| RefreshError::UnknownEnvironment(e.to_string()))?,
        None => catalog.schema.config.refresh,
    };
    let Some(period) = config else { return Ok(()) };
    let (Some(a), Some(b)) = (last.start(), at.start()) else { return Ok(()) };
    let gap = Instant::from_datetime(period.unit, b).ticks() - Instant::from_datetime(period.unit, a).ticks();
    if gap < i64::from(period.count) {
        return Err(RefreshError::ScheduleViolation { env: env_label(env), last, at, period: period.to_string() });
    }
    Ok(())
}

/// Apply ticks in order, checking each environment's refresh period.
pub fn run_schedule(
    catalog: &Catalog,
    store: &mut WarehouseStore,
    ticks: &[RefreshTick],
    weighting: Weighting,
) -> Result<Vec<RefreshReport>> {
    let mut reports = Vec::new();
    for tick in ticks {
        let env = tick.environment.as_deref();
        if let Some(last) = store.last_tick.get(env.unwrap_or(GLOBAL_ENV)) {
            if last.unit() == tick.at.unit() && tick.at.ticks() > last.ticks() {
                check_spacing(catalog, env, *last, tick.at)?;
            }
        }
        let mut report = refresh(catalog, store, &tick.snapshot, tick.at, env)?;
        if tick.archive {
            report.archive = Some(apply_archive(catalog, store, env, weighting)?);
        }
        reports.push(report);
    }
    Ok(reports)
}
