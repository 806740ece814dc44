//! Archival of past states into summarized archived states.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::algebra::aggregate;
use crate::catalog::Catalog;
use crate::model::{State, WarehouseObject, WarehouseStore};
use crate::schema::{AggFn, ArchiveAtom, ArchiveEntry, ArchiveMode, ArchivePredicate};
use crate::temporal::{
    coarsen_instant, group_by_grain, normalize_domain, Instant, Interval, TemporalDomain, TemporalError,
    TemporalUnit,
};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error("no states to archive")]
    EmptyInput,
    #[error("non-numeric aggregation over `{0}`")]
    NonNumericAgg(String),
    #[error("archived states of {0} would overlap")]
    OverlappingArchive(String),
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("no archive predicate configured for {0}")]
    NoPredicate(String),
}

pub type Result<T> = std::result::Result<T, ArchiveError>;

/// How samples are weighted by `avg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Every state counts once.
    #[default]
    PerState,
    /// States weigh by the number of grains they cover.
    Duration,
}

/// Coarse grain range `[first, last]` an interval spans in `unit`.
fn coarse_span(iv: &Interval, unit: TemporalUnit) -> Result<(i64, i64)> {
    if iv.unit() == unit {
        return Ok((iv.start_ticks(), iv.end_ticks()));
    }
    let end = iv.end().ok_or(TemporalError::UnboundedDomain)?;
    Ok((coarsen_instant(iv.start(), unit)?.ticks(), coarsen_instant(end, unit)?.ticks()))
}

fn atom_holds(atom: &ArchiveAtom, domain: &TemporalDomain) -> Result<bool> {
    let g = match atom {
        ArchiveAtom::Within(g) | ArchiveAtom::NotWithin(g) | ArchiveAtom::Before(g) => *g,
    };
    for iv in domain.intervals() {
        let (lo, hi) = coarse_span(iv, g.unit())?;
        let ok = match atom {
            ArchiveAtom::Within(_) => lo == g.ticks() && hi == g.ticks(),
            ArchiveAtom::NotWithin(_) => g.ticks() < lo || g.ticks() > hi,
            ArchiveAtom::Before(_) => hi < g.ticks(),
        };
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Whether a whole state domain satisfies an archive predicate.
pub fn predicate_holds(pred: &ArchivePredicate, domain: &TemporalDomain) -> Result<bool> {
    if domain.is_empty() || domain.ends_now() {
        return Ok(false);
    }
    for a in &pred.0 {
        if !atom_holds(a, domain)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Indices of the past states whose whole domain satisfies the predicate.
pub fn select_for_archive(o: &WarehouseObject, pred: &ArchivePredicate) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, s) in o.past.iter().enumerate() {
        if predicate_holds(pred, &s.domain)? {
            out.push(k);
        }
    }
    Ok(out)
}

fn fold(states: &[&State], entries: &[ArchiveEntry], weighting: Weighting) -> Result<BTreeMap<String, Value>> {
    let mut value = BTreeMap::new();
    for e in entries {
        let v = if e.func == AggFn::Avg && weighting == Weighting::Duration {
            weighted_avg(states, &e.property)?
        } else {
            let samples: Vec<Value> = states.iter().map(|s| s.get(&e.property)).collect();
            aggregate(e.func, &samples).map_err(|_| ArchiveError::NonNumericAgg(e.property.clone()))?
        };
        value.insert(e.property.clone(), v);
    }
    Ok(value)
}

fn weighted_avg(states: &[&State], prop: &str) -> Result<Value> {
    let (mut total, mut weight) = (0.0, 0.0);
    for s in states {
        let v = s.get(prop);
        if v.is_null() {
            continue;
        }
        let x = v.as_f64().ok_or_else(|| ArchiveError::NonNumericAgg(prop.to_string()))?;
        let w = s.domain.grain_count().ok_or(TemporalError::UnboundedDomain)? as f64;
        total += x * w;
        weight += w;
    }
    Ok(if weight == 0.0 { Value::Null } else { Value::Float(total / weight) })
}

/// Fold states into a single archived state covering all their grains.
pub fn archive_classical(states: &[&State], entries: &[ArchiveEntry], weighting: Weighting) -> Result<State> {
    if states.is_empty() {
        return Err(ArchiveError::EmptyInput);
    }
    let intervals = states.iter().flat_map(|s| s.domain.intervals().iter().copied()).collect();
    Ok(State::new(fold(states, entries, weighting)?, normalize_domain(intervals)?))
}

/// Fold states per grain of a coarser unit: one archived state per grain touched.
pub fn archive_temporal(
    states: &[&State],
    entries: &[ArchiveEntry],
    target: TemporalUnit,
    weighting: Weighting,
) -> Result<Vec<State>> {
    if states.is_empty() {
        return Err(ArchiveError::EmptyInput);
    }
    let keyed: Vec<(TemporalDomain, usize)> =
        states.iter().enumerate().map(|(k, s)| (s.domain.clone(), k)).collect();
    let groups = group_by_grain(&keyed, target)?;
    let mut out = Vec::new();
    for (grain, members) in groups {
        let group: Vec<&State> = members.iter().map(|&k| states[k]).collect();
        out.push(State::new(fold(&group, entries, weighting)?, TemporalDomain::single(Interval::single(grain))));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArchiveCounts {
    pub consumed: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ArchiveReport {
    pub classes: BTreeMap<String, ArchiveCounts>,
}

impl fmt::Display for ArchiveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, n) in &self.classes {
            writeln!(f, "{c}: consumed {}, produced {}", n.consumed, n.produced)?;
        }
        Ok(())
    }
}

fn disjoint_from(existing: &[State], new: &State) -> Result<bool> {
    for s in existing {
        if s.domain.unit() == new.domain.unit() && s.domain.intersects(&new.domain)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Archive one object; returns (consumed, produced).
pub fn archive_object(
    o: &mut WarehouseObject,
    pred: &ArchivePredicate,
    entries: &[ArchiveEntry],
    mode: ArchiveMode,
    weighting: Weighting,
) -> Result<ArchiveCounts> {
    let picked = select_for_archive(o, pred)?;
    if picked.is_empty() {
        return Ok(ArchiveCounts::default());
    }
    let states: Vec<&State> = picked.iter().map(|&k| &o.past[k]).collect();
    let produced = match mode {
        ArchiveMode::Classical => vec![archive_classical(&states, entries, weighting)?],
        ArchiveMode::Temporal(u) => archive_temporal(&states, entries, u, weighting)?,
    };
    for (k, s) in produced.iter().enumerate() {
        if !disjoint_from(&o.archived, s)? || !disjoint_from(&produced[..k], s)? {
            return Err(ArchiveError::OverlappingArchive(o.oid.clone()));
        }
    }
    let counts = ArchiveCounts { consumed: picked.len(), produced: produced.len() };
    let mut k = 0;
    o.past.retain(|_| {
        k += 1;
        !picked.contains(&(k - 1))
    });
    o.archived.extend(produced);
    o.archived.sort_by_key(|s| s.domain.first_start().map(|i| (i.unit(), i.ticks())));
    Ok(counts)
}

/// Archive every object of an environment (`None`: classes outside every environment).
pub fn apply_archive(
    catalog: &Catalog,
    store: &mut WarehouseStore,
    env: Option<&str>,
    weighting: Weighting,
) -> Result<ArchiveReport> {
    let schema = &catalog.schema;
    let (classes, config, label): (Vec<String>, _, String) = match env {
        Some(name) => {
            let e = schema.environment(name).ok_or_else(|| ArchiveError::UnknownEnvironment(name.to_string()))?;
            (e.classes.clone(), schema.config_for(e.classes.first().map_or("", |c| c.as_str())), format!("environment {name}"))
        }
        None => (
            catalog.order.iter().filter(|c| schema.environment_of(c).is_none()).cloned().collect(),
            schema.config.clone(),
            "the global configuration".to_string(),
        ),
    };
    let pred = config.archive_when.clone().ok_or(ArchiveError::NoPredicate(label))?;
    let mode = config.archive_mode.unwrap_or_default();
    let mut report = ArchiveReport::default();
    // work on a copy so a failure leaves the store untouched
    let mut staged = store.clone();
    for c in &classes {
        let Some(class) = catalog.class(c) else { continue };
        let counts = report.classes.entry(c.clone()).or_default();
        if class.archive_filter.is_empty() {
            continue;
        }
        if let Some(extent) = staged.classes.get_mut(c) {
            for o in &mut extent.objects {
                let n = archive_object(o, &pred, &class.archive_filter, mode, weighting)?;
                counts.consumed += n.consumed;
                counts.produced += n.produced;
            }
        }
    }
    *store = staged;
    Ok(report)
}

/// Parse `not within annee:2000 and before ...` style predicates.
pub fn parse_predicate(text: &str) -> std::result::Result<ArchivePredicate, String> {
    let mut atoms = Vec::new();
    for part in text.split(" and ") {
        let words: Vec<&str> = part.split_whitespace().collect();
        let (ctor, inst): (fn(Instant) -> ArchiveAtom, &str) = match words.as_slice() {
            ["not", "within", i] => (ArchiveAtom::NotWithin, i),
            ["within", i] => (ArchiveAtom::Within, i),
            ["before", i] => (ArchiveAtom::Before, i),
            _ => return Err(format!("cannot parse archive predicate `{part}`")),
        };
        atoms.push(ctor(inst.parse().map_err(|e: TemporalError| e.to_string())?));
    }
    Ok(ArchivePredicate(atoms))
}
