//! Method derivability: property, object and method usage matrices and the
//! local / global analyses over them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::algebra::{Column, DerivedProp, Restriction};
use crate::catalog::{resolve_class_path, Catalog, WarehouseClass};
use crate::predicate::{implies, Atom, CmpOp, Conjunction, Path, Term};
use crate::schema::WarehouseSchema;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzerError {
    #[error("method `{0}` has no usage metadata")]
    UnknownMethodMeta(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixKind {
    Mup,
    Muo,
    Mum,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Mup => "MUP",
            MatrixKind::Muo => "MUO",
            MatrixKind::Mum => "MUM",
        }
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 0/1 method × criterion matrix with a `Derive` row and a `Derivable` column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageMatrix {
    pub kind: MatrixKind,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<u8>>,
    /// 0/1 for MUP and MUO; -1 (not yet analyzed), 0 or 1 for MUM.
    pub derived_row: Vec<i8>,
    pub derivable_col: Vec<Option<u8>>,
}

impl UsageMatrix {
    pub fn new(kind: MatrixKind, rows: Vec<String>, cols: Vec<String>) -> Self {
        let (r, c) = (rows.len(), cols.len());
        UsageMatrix {
            kind,
            rows,
            cols,
            cells: vec![vec![0; c]; r],
            derived_row: vec![0; c],
            derivable_col: vec![None; r],
        }
    }

    pub fn row_index(&self, name: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == name)
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == name)
    }

    pub fn cell(&self, i: usize, j: usize) -> u8 {
        self.cells[i][j]
    }
}

/// Drop criteria nobody uses and the warehouse does not have.
pub fn optimize(m: &UsageMatrix) -> UsageMatrix {
    let keep: Vec<usize> = (0..m.cols.len())
        .filter(|&j| m.derived_row[j] != 0 || m.cells.iter().any(|r| r[j] != 0))
        .collect();
    UsageMatrix {
        kind: m.kind,
        rows: m.rows.clone(),
        cols: keep.iter().map(|&j| m.cols[j].clone()).collect(),
        cells: m.cells.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect(),
        derived_row: keep.iter().map(|&j| m.derived_row[j]).collect(),
        derivable_col: m.derivable_col.clone(),
    }
}

/// Criteria used by row `i` but absent from the warehouse; sets the row's verdict.
pub fn analyse_locale(i: usize, m: &mut UsageMatrix) -> BTreeSet<String> {
    let missing: BTreeSet<String> = (0..m.cols.len())
        .filter(|&j| m.cells[i][j] == 1 && m.derived_row[j] != 1)
        .map(|j| m.cols[j].clone())
        .collect();
    m.derivable_col[i] = Some(u8::from(missing.is_empty()));
    missing
}

/// Methods of the classes involved in a mapping, qualified and sorted.
fn involved_methods(schema: &WarehouseSchema, class: &WarehouseClass) -> Vec<String> {
    let mut rows: Vec<String> = class
        .template
        .involved_classes
        .iter()
        .filter_map(|c| schema.source(c))
        .flat_map(|c| c.methods.iter().map(move |m| format!("{}::{}", c.name, m.name)))
        .collect();
    rows.sort();
    rows
}

/// Leaf columns of the involved classes, with their display labels.
fn involved_columns(schema: &WarehouseSchema, class: &WarehouseClass) -> BTreeMap<Column, String> {
    let mut defined_by: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut cols = Vec::new();
    for c in class.template.involved_classes.iter().filter_map(|c| schema.source(c)) {
        for p in &c.properties {
            defined_by.entry(&p.name).or_default().insert(&c.name);
            for leaf in p.ty.leaf_paths() {
                let path = if leaf.is_empty() { p.name.clone() } else { format!("{}.{leaf}", p.name) };
                cols.push(Column::new(&c.name, &path));
            }
        }
    }
    cols.into_iter()
        .map(|col| {
            let label = if defined_by[col.property()].len() > 1 {
                format!("{}{}", col.class, col.path)
            } else {
                col.path.clone()
            };
            (col, label)
        })
        .collect()
}

/// Columns read by a property path used in a method of `class`.
fn path_columns(schema: &WarehouseSchema, class: &str, path: &Path) -> Vec<Column> {
    let Some((defining, ty)) = resolve_class_path(schema, class, path) else {
        return Vec::new();
    };
    ty.leaf_paths()
        .into_iter()
        .map(|leaf| {
            let base = path.to_string();
            Column::new(&defining, &if leaf.is_empty() { base } else { format!("{base}.{leaf}") })
        })
        .collect()
}

fn usage_of<'s>(
    schema: &'s WarehouseSchema,
    method: &str,
) -> Result<(&'s str, &'s crate::schema::MethodUsage), AnalyzerError> {
    let (class, sig) = schema.method(method).ok_or_else(|| AnalyzerError::UnknownMethod(method.to_string()))?;
    let usage = sig.usage.as_ref().ok_or_else(|| AnalyzerError::UnknownMethodMeta(method.to_string()))?;
    Ok((&class.name, usage))
}

/// Property usage matrix of one warehouse class.
pub fn build_mup(schema: &WarehouseSchema, class: &WarehouseClass) -> Result<UsageMatrix, AnalyzerError> {
    let labels = involved_columns(schema, class);
    let rows = involved_methods(schema, class);
    let cols: Vec<Column> = labels.keys().cloned().collect();
    let mut m = UsageMatrix::new(MatrixKind::Mup, rows, cols.iter().map(|c| labels[c].clone()).collect());
    for i in 0..m.rows.len() {
        let (owner, usage) = usage_of(schema, &m.rows[i])?;
        for p in &usage.properties {
            for col in path_columns(schema, owner, p) {
                if let Some(j) = cols.iter().position(|c| *c == col) {
                    m.cells[i][j] = 1;
                }
            }
        }
    }
    let derived = class.template.derived_props();
    for (j, col) in cols.iter().enumerate() {
        m.derived_row[j] = i8::from(derived.contains(&DerivedProp::Column(col.clone())));
    }
    Ok(m)
}

type ResolvedAtom = (Option<Column>, CmpOp, Value);

fn resolve_conjunction(schema: &WarehouseSchema, class: &str, conj: &Conjunction) -> Vec<ResolvedAtom> {
    conj.0
        .iter()
        .map(|a| {
            let (path, op, v) = match a {
                Atom::Cmp { left: Term::Path(p), op, right: Term::Lit(v) } => (p, *op, v.clone()),
                Atom::Cmp { left: Term::Lit(v), op, right: Term::Path(p) } => (p, op.flip(), v.clone()),
                _ => return (None, CmpOp::Eq, Value::Null),
            };
            let col = match path_columns(schema, class, path).as_slice() {
                [c] => Some(c.clone()),
                _ => None,
            };
            (col, op, v)
        })
        .collect()
}

fn conjunction_label(atoms: &[ResolvedAtom], raw: &Conjunction) -> String {
    let known = atoms.iter().all(|(c, ..)| c.is_some());
    if !known {
        return raw.to_string();
    }
    atoms
        .iter()
        .map(|(c, op, v)| {
            let mut lit = String::new();
            crate::predicate::write_literal(&mut lit, v).expect("string write");
            format!("{} {} {lit}", c.as_ref().expect("checked"), op.symbol())
        })
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Whether every object satisfying `conj` is kept by the restriction.
pub fn covers(restriction: &Restriction, conj: &[ResolvedAtom]) -> bool {
    restriction.0.iter().any(|disjunct| {
        disjunct.iter().all(|sel| {
            let Some(col) = &sel.column else { return false };
            let premises: Vec<(CmpOp, Value)> = conj
                .iter()
                .filter(|(c, ..)| c.as_ref() == Some(col))
                .map(|(_, op, v)| (*op, v.clone()))
                .collect();
            implies(&premises, &(sel.op, sel.value.clone()))
        })
    })
}

/// Object usage matrix of one warehouse class.
pub fn build_muo(schema: &WarehouseSchema, class: &WarehouseClass) -> Result<UsageMatrix, AnalyzerError> {
    let rows = involved_methods(schema, class);
    let mut cols: BTreeMap<String, Vec<ResolvedAtom>> = BTreeMap::new();
    let mut uses: Vec<BTreeSet<String>> = Vec::new();
    for r in &rows {
        let (owner, usage) = usage_of(schema, r)?;
        let mut mine = BTreeSet::new();
        for conj in usage.objects.iter().flat_map(|d| d.0.iter()) {
            let atoms = resolve_conjunction(schema, owner, conj);
            let label = conjunction_label(&atoms, conj);
            mine.insert(label.clone());
            cols.entry(label).or_insert(atoms);
        }
        uses.push(mine);
    }
    let labels: Vec<String> = cols.keys().cloned().collect();
    let mut m = UsageMatrix::new(MatrixKind::Muo, rows, labels.clone());
    for (i, mine) in uses.iter().enumerate() {
        for (j, l) in labels.iter().enumerate() {
            m.cells[i][j] = u8::from(mine.contains(l));
        }
    }
    for (j, l) in labels.iter().enumerate() {
        m.derived_row[j] = i8::from(covers(&class.template.restriction, &cols[l]));
    }
    Ok(m)
}

/// Global method usage matrix. `locally_ok[i]` is false for rows already known
/// non-derivable; those start with a 0 in the `Derive` row.
pub fn build_mum(schema: &WarehouseSchema, methods: &[String], locally_ok: &[bool]) -> Result<UsageMatrix, AnalyzerError> {
    let mut m = UsageMatrix::new(MatrixKind::Mum, methods.to_vec(), methods.to_vec());
    for (i, r) in methods.iter().enumerate() {
        let (owner, usage) = usage_of(schema, r)?;
        for callee in &usage.methods {
            let q = schema.qualify_method(owner, callee).ok_or_else(|| AnalyzerError::UnknownMethod(callee.clone()))?;
            if let Some(j) = m.col_index(&q) {
                m.cells[i][j] = 1;
            }
        }
    }
    for (j, ok) in locally_ok.iter().enumerate() {
        m.derived_row[j] = if *ok { -1 } else { 0 };
    }
    Ok(m)
}

/// Result of one global analysis: missing methods and detected cycles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalOutcome {
    /// Missing methods of every analyzed row.
    pub missing: BTreeMap<usize, BTreeSet<usize>>,
    /// For rows caught in a cycle, the other members of that cycle.
    pub cycles: BTreeMap<usize, BTreeSet<usize>>,
}

/// Recursive method-level analysis of row `i`. `visite` flags rows whose
/// analysis is in progress; `stack` holds them in call order.
pub fn analyse_globale(
    i: usize,
    mum: &mut UsageMatrix,
    visite: &mut [u8],
    stack: &mut Vec<usize>,
    outcome: &mut GlobalOutcome,
) -> BTreeSet<usize> {
    visite[i] = 1;
    stack.push(i);
    let mut missing = BTreeSet::new();
    for j in 0..mum.cols.len() {
        if mum.cells[i][j] != 1 || j == i {
            continue;
        }
        match mum.derived_row[j] {
            0 => {
                missing.insert(j);
            }
            -1 if visite[j] == 1 => {
                missing.insert(j);
                let from = stack.iter().position(|&s| s == j).unwrap_or(0);
                let members: Vec<usize> = stack[from..].to_vec();
                for &a in &members {
                    let others = outcome.cycles.entry(a).or_default();
                    others.extend(members.iter().copied().filter(|&b| b != a));
                }
            }
            -1 => {
                let sub = analyse_globale(j, mum, visite, stack, outcome);
                if !sub.is_empty() || mum.derived_row[j] != 1 {
                    missing.insert(j);
                }
            }
            _ => {}
        }
    }
    stack.pop();
    visite[i] = 0;
    mum.derivable_col[i] = Some(u8::from(missing.is_empty()));
    if mum.derived_row[i] != 0 {
        mum.derived_row[i] = i8::from(missing.is_empty());
    }
    if outcome.cycles.contains_key(&i) {
        mum.derived_row[i] = 0;
        mum.derivable_col[i] = Some(0);
    }
    outcome.missing.insert(i, missing.clone());
    missing
}

/// Run the global analysis over every row not yet decided.
pub fn analyse_mum(mum: &mut UsageMatrix) -> GlobalOutcome {
    let n = mum.rows.len();
    let mut outcome = GlobalOutcome::default();
    for i in 0..n {
        if mum.derivable_col[i].is_some() {
            continue;
        }
        let mut visite = vec![0u8; n];
        analyse_globale(i, mum, &mut visite, &mut Vec::new(), &mut outcome);
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Derivable,
    Missing(BTreeSet<String>),
    Cycle(BTreeSet<String>),
}

#[derive(Debug, Clone)]
pub struct ClassMatrices {
    pub class: String,
    pub mup: UsageMatrix,
    pub muo: UsageMatrix,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub matrices: Vec<ClassMatrices>,
    pub mum: UsageMatrix,
    /// Verdict per qualified method id.
    pub verdicts: BTreeMap<String, Verdict>,
    /// Display label per qualified method id: bare name when unique.
    pub labels: BTreeMap<String, String>,
    /// Derived behavior per warehouse class.
    pub behavior: BTreeMap<String, Vec<String>>,
}

impl AnalysisReport {
    pub fn is_derivable(&self, method: &str) -> bool {
        matches!(self.verdicts.get(method), Some(Verdict::Derivable))
    }

    pub fn label<'a>(&'a self, method: &'a str) -> &'a str {
        self.labels.get(method).map(String::as_str).unwrap_or(method)
    }

    /// Labels of derivable methods.
    pub fn derivable(&self) -> BTreeSet<String> {
        self.verdicts
            .iter()
            .filter(|(_, v)| **v == Verdict::Derivable)
            .map(|(m, _)| self.label(m).to_string())
            .collect()
    }

    /// Label → missing set for non-derivable methods (cycle members list their partners).
    pub fn non_derivable(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.verdicts
            .iter()
            .filter_map(|(m, v)| match v {
                Verdict::Derivable => None,
                Verdict::Missing(s) | Verdict::Cycle(s) => Some((self.label(m).to_string(), s.clone())),
            })
            .collect()
    }

    /// One line per method: `name: DERIVABLE`, `name: MISSING {..}` or `name: CYCLE with {..}`.
    pub fn summary_lines(&self) -> Vec<(String, Verdict)> {
        self.verdicts.iter().map(|(m, v)| (self.label(m).to_string(), v.clone())).collect()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        match self {
            Verdict::Derivable => f.write_str("DERIVABLE"),
            Verdict::Missing(s) => write!(f, "MISSING {{{}}}", set(s)),
            Verdict::Cycle(s) => write!(f, "CYCLE with {{{}}}", set(s)),
        }
    }
}

fn method_labels(methods: &[String]) -> BTreeMap<String, String> {
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for m in methods {
        *count.entry(m.split_once("::").map_or(m.as_str(), |(_, n)| n)).or_default() += 1;
    }
    methods
        .iter()
        .map(|m| {
            let bare = m.split_once("::").map_or(m.as_str(), |(_, n)| n);
            let label = if count[bare] == 1 { bare.to_string() } else { m.clone() };
            (m.clone(), label)
        })
        .collect()
}

/// Full derivability analysis of a resolved warehouse. Methods in `assume`
/// (qualified ids) are taken as derivable without analysis.
pub fn deriver_comportement(catalog: &Catalog, assume: &BTreeSet<String>) -> Result<AnalysisReport, AnalyzerError> {
    let schema = &catalog.schema;
    let mut matrices = Vec::new();
    for name in &catalog.order {
        let class = &catalog.classes[name];
        matrices.push(ClassMatrices {
            class: name.clone(),
            mup: build_mup(schema, class)?,
            muo: build_muo(schema, class)?,
        });
    }
    // local verdicts: best over every mapping the method takes part in
    let mut local: BTreeMap<String, (bool, BTreeSet<String>, String)> = BTreeMap::new();
    for cm in &mut matrices {
        for i in 0..cm.mup.rows.len() {
            let mut missing = analyse_locale(i, &mut cm.mup);
            let k = cm.muo.row_index(&cm.mup.rows[i]).expect("same rows");
            missing.extend(analyse_locale(k, &mut cm.muo));
            let ok = missing.is_empty();
            let candidate = (ok, missing, cm.class.clone());
            let entry = local.entry(cm.mup.rows[i].clone()).or_insert_with(|| candidate.clone());
            let better = (!candidate.0, candidate.1.len(), &candidate.2) < (!entry.0, entry.1.len(), &entry.2);
            if better {
                *entry = candidate;
            }
        }
    }
    for a in assume {
        if let Some(e) = local.get_mut(a) {
            *e = (true, BTreeSet::new(), e.2.clone());
        }
    }
    let methods: Vec<String> = local.keys().cloned().collect();
    let labels = method_labels(&methods);
    let ok: Vec<bool> = methods.iter().map(|m| local[m].0).collect();
    let mut mum = build_mum(schema, &methods, &ok)?;
    for a in assume {
        if let Some(i) = mum.row_index(a) {
            mum.derived_row[i] = 1;
            mum.derivable_col[i] = Some(1);
        }
    }
    let outcome = analyse_mum(&mut mum);

    let mut verdicts = BTreeMap::new();
    for (i, m) in methods.iter().enumerate() {
        let verdict = if let Some(partners) = outcome.cycles.get(&i) {
            Verdict::Cycle(partners.iter().map(|&j| labels[&methods[j]].clone()).collect())
        } else {
            let mut missing = local[m].1.clone();
            missing.extend(outcome.missing.get(&i).into_iter().flatten().map(|&j| labels[&methods[j]].clone()));
            if missing.is_empty() && local[m].0 {
                Verdict::Derivable
            } else {
                Verdict::Missing(missing)
            }
        };
        verdicts.insert(m.clone(), verdict);
    }

    let mut behavior = BTreeMap::new();
    for cm in &matrices {
        let class = &catalog.classes[&cm.class];
        let derived_cols: BTreeSet<String> = class
            .template
            .derived_props()
            .into_iter()
            .filter_map(|p| match p {
                DerivedProp::Column(c) => Some(c.class),
                DerivedProp::Computed(_) => None,
            })
            .collect();
        let mut list = Vec::new();
        for (i, r) in cm.mup.rows.iter().enumerate() {
            let k = cm.muo.row_index(r).expect("same rows");
            let owner = r.split_once("::").map_or("", |(c, _)| c);
            if verdicts.get(r) == Some(&Verdict::Derivable)
                && cm.mup.derivable_col[i] == Some(1)
                && cm.muo.derivable_col[k] == Some(1)
                && derived_cols.contains(owner)
            {
                list.push(r.clone());
            }
        }
        behavior.insert(cm.class.clone(), list);
    }
    Ok(AnalysisReport { matrices, mum, verdicts, labels, behavior })
}

/// Qualify method names given bare (`age`) or qualified (`PERSONNE::age`).
pub fn resolve_methods(schema: &WarehouseSchema, names: &[String]) -> Result<BTreeSet<String>, String> {
    let mut fixed = BTreeSet::new();
    for a in names {
        if a.contains("::") {
            if schema.method(a).is_none() {
                return Err(format!("unknown method `{a}`"));
            }
            fixed.insert(a.clone());
            continue;
        }
        let matches: Vec<String> = schema
            .all_methods()
            .into_iter()
            .filter(|(q, _)| q.rsplit_once("::").is_some_and(|(_, m)| m == a))
            .map(|(q, _)| q)
            .collect();
        match matches.as_slice() {
            [one] => {
                fixed.insert(one.clone());
            }
            [] => return Err(format!("unknown method `{a}`")),
            many => return Err(format!("ambiguous method `{a}`: {}", many.join(", "))),
        }
    }
    Ok(fixed)
}

/// Convenience wrapper used by validation and the CLI.
pub fn analyze(catalog: &Catalog, assume: &BTreeSet<String>) -> Result<AnalysisReport, AnalyzerError> {
    deriver_comportement(catalog, assume)
}
