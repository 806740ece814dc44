//! Resolved warehouse classes and schema validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::algebra::{
    eval, EvalContext, EvalError, EvalResult, Field, HierarchyEdge, MappingExpr, SourceSnapshot,
};
use crate::predicate::{Atom, Path, Term};
use crate::schema::{AggFn, ArchiveEntry, ArchiveMode, WarehouseSchema};
use crate::value::SemType;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { location: location.into(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// A warehouse class after its mapping has been resolved against the source.
#[derive(Debug, Clone)]
pub struct WarehouseClass {
    pub name: String,
    pub structure: Vec<Field>,
    pub supers: Vec<String>,
    pub mapping: MappingExpr,
    pub tempo_filter: Vec<String>,
    pub archive_filter: Vec<ArchiveEntry>,
    pub environment: Option<String>,
    /// Structure-only evaluation of the mapping (no objects).
    pub template: EvalResult,
}

impl WarehouseClass {
    pub fn field(&self, name: &str) -> Option<&Field> {
        self.structure.iter().find(|f| f.name == name)
    }

    pub fn property_names(&self) -> Vec<&str> {
        self.structure.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn is_temporal(&self, prop: &str) -> bool {
        self.tempo_filter.iter().any(|p| p == prop)
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub schema: WarehouseSchema,
    /// Classes in dependency order.
    pub order: Vec<String>,
    pub classes: BTreeMap<String, WarehouseClass>,
}

impl Catalog {
    /// Resolve every warehouse class; fails with the diagnostics that prevent it.
    pub fn resolve(schema: &WarehouseSchema) -> Result<Catalog, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        check_names(schema, &mut diags);
        check_sources(schema, &mut diags);
        let order = match dependency_order(schema) {
            Ok(o) => o,
            Err(d) => {
                diags.push(d);
                return Err(diags);
            }
        };
        let empty = SourceSnapshot::empty();
        let mut ctx = EvalContext::new(schema, &empty);
        let mut classes = BTreeMap::new();
        for name in &order {
            let decl = schema.class(name).expect("ordered names exist");
            let loc = format!("class {name}");
            let Some(mapping) = &decl.mapping else {
                diags.push(Diagnostic::new(loc, "warehouse class has no mapping"));
                continue;
            };
            if let Some(d) = nested_hierarchy(mapping, &loc) {
                diags.push(d);
                continue;
            }
            let template = match eval(mapping, &ctx) {
                Ok(t) => t,
                Err(e) => {
                    diags.push(Diagnostic::new(loc, e.to_string()));
                    continue;
                }
            };
            ctx.classes.insert(name.clone(), template.clone());
            classes.insert(
                name.clone(),
                WarehouseClass {
                    name: name.clone(),
                    structure: template.structure.clone(),
                    supers: decl.supers.clone(),
                    mapping: mapping.clone(),
                    tempo_filter: decl.tempo_filter.clone(),
                    archive_filter: decl.archive_filter.clone(),
                    environment: schema.environment_of(name).map(|e| e.name.clone()),
                    template,
                },
            );
        }
        if !diags.is_empty() {
            return Err(diags);
        }
        // hierarchy edges created by generalize / specialize
        let mut extra: Vec<(String, String)> = Vec::new();
        for (name, c) in &classes {
            match &c.template.hierarchy {
                Some(HierarchyEdge::Specialize { supers }) => {
                    extra.extend(supers.iter().map(|s| (name.clone(), s.clone())))
                }
                Some(HierarchyEdge::Generalize { subclasses }) => {
                    extra.extend(subclasses.iter().map(|s| (s.clone(), name.clone())))
                }
                None => {}
            }
        }
        for (sub, sup) in extra {
            if let Some(c) = classes.get_mut(&sub) {
                if classes_contains_name(schema, &sup) && !c.supers.contains(&sup) {
                    c.supers.push(sup);
                }
            }
        }
        Ok(Catalog { schema: schema.clone(), order, classes })
    }

    pub fn class(&self, name: &str) -> Option<&WarehouseClass> {
        self.classes.get(name)
    }

    /// Evaluate every class mapping over a snapshot, in dependency order.
    pub fn evaluate(&self, snapshot: &SourceSnapshot) -> Result<BTreeMap<String, EvalResult>, (String, EvalError)> {
        let mut ctx = EvalContext::new(&self.schema, snapshot);
        for name in &self.order {
            let class = &self.classes[name];
            let r = eval(&class.mapping, &ctx).map_err(|e| (name.clone(), e))?;
            ctx.classes.insert(name.clone(), r);
        }
        Ok(ctx.classes)
    }

    /// Transitive warehouse superclasses of a class.
    pub fn ancestors(&self, name: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut stack = vec![name.to_string()];
        while let Some(c) = stack.pop() {
            for s in self.classes.get(&c).map(|c| c.supers.as_slice()).unwrap_or_default() {
                if !out.contains(s) && s != name {
                    out.push(s.clone());
                    stack.push(s.clone());
                }
            }
        }
        out
    }
}

fn classes_contains_name(schema: &WarehouseSchema, name: &str) -> bool {
    schema.class(name).is_some()
}

fn nested_hierarchy(mapping: &MappingExpr, loc: &str) -> Option<Diagnostic> {
    let mut nested = false;
    for b in mapping.operands() {
        b.expr.walk(&mut |e| nested |= e.is_hierarchy());
    }
    nested.then(|| Diagnostic::new(loc, "generalize/specialize must be the outermost mapping function"))
}

fn check_names(schema: &WarehouseSchema, diags: &mut Vec<Diagnostic>) {
    let mut seen = BTreeSet::new();
    let names = schema
        .sources
        .iter()
        .map(|c| &c.name)
        .chain(schema.classes.iter().map(|c| &c.name));
    for n in names {
        if !seen.insert(n) {
            diags.push(Diagnostic::new(format!("class {n}"), "duplicate declaration"));
        }
    }
    let mut envs = BTreeSet::new();
    for e in &schema.environments {
        if !envs.insert(&e.name) {
            diags.push(Diagnostic::new(format!("environment {}", e.name), "duplicate declaration"));
        }
    }
}

fn check_sources(schema: &WarehouseSchema, diags: &mut Vec<Diagnostic>) {
    for c in &schema.sources {
        let loc = |p: &str| format!("class {}.{p}", c.name);
        for s in &c.supers {
            if schema.source(s).is_none() {
                diags.push(Diagnostic::new(format!("class {}", c.name), format!("unknown superclass `{s}`")));
            }
        }
        let mut props = BTreeSet::new();
        for p in &c.properties {
            if !props.insert(&p.name) {
                diags.push(Diagnostic::new(loc(&p.name), "duplicate property"));
            }
            if let Some(t) = p.ty.ref_target() {
                if schema.source(t).is_none() {
                    diags.push(Diagnostic::new(loc(&p.name), format!("unknown class `{t}`")));
                    continue;
                }
            }
            if let crate::schema::PropertyKind::Relationship { inverse: Some((ic, ip)) } = &p.kind {
                let back = schema
                    .flattened_properties(ic)
                    .into_iter()
                    .find(|(_, q)| &q.name == ip)
                    .map(|(_, q)| q.clone());
                let ok = match &back {
                    Some(q) => q.ty.ref_target().is_some_and(|t| {
                        t == c.name || schema.source_ancestors(&c.name).iter().any(|a| a == t)
                    }),
                    None => false,
                };
                if !ok {
                    diags.push(Diagnostic::new(loc(&p.name), format!("inverse `{ic}::{ip}` does not point back")));
                }
            }
        }
        for m in &c.methods {
            let Some(u) = &m.usage else { continue };
            let mloc = format!("method {}::{}", c.name, m.name);
            for p in &u.properties {
                if resolve_class_path(schema, &c.name, p).is_none() {
                    diags.push(Diagnostic::new(&mloc, format!("unknown property `{p}`")));
                }
            }
            for r in &u.methods {
                if schema.qualify_method(&c.name, r).is_none() {
                    diags.push(Diagnostic::new(&mloc, format!("unknown method `{r}`")));
                }
            }
            if let Some(pred) = &u.objects {
                for atom in pred.atoms() {
                    let paths: Vec<&Path> = match atom {
                        Atom::Cmp { left, right, .. } => [left, right]
                            .into_iter()
                            .filter_map(|t| if let Term::Path(p) = t { Some(p) } else { None })
                            .collect(),
                        Atom::Member { coll, .. } => vec![coll],
                        Atom::Const(_) => vec![],
                    };
                    for p in paths {
                        if resolve_class_path(schema, &c.name, p).is_none() {
                            diags.push(Diagnostic::new(&mloc, format!("unknown property `{p}`")));
                        }
                    }
                }
            }
        }
    }
    for cycle in cycles(schema.sources.iter().map(|c| (c.name.clone(), c.supers.clone())).collect()) {
        diags.push(Diagnostic::new(format!("class {}", cycle[0]), format!("inheritance cycle {}", cycle.join(" <= "))));
    }
}

/// Resolve a property path on a source class: returns the defining class and the leaf type.
pub fn resolve_class_path<'a>(
    schema: &'a WarehouseSchema,
    class: &str,
    path: &Path,
) -> Option<(String, &'a SemType)> {
    let segs = path.segments();
    let (defining, prop) = schema
        .flattened_properties(class)
        .into_iter()
        .find(|(_, p)| p.name == segs[0])?;
    Some((defining, prop.ty.path(&segs[1..])?))
}

/// Distinct cycles of a directed graph, each reported once, rotated to its smallest member.
fn cycles(graph: BTreeMap<String, Vec<String>>) -> Vec<Vec<String>> {
    fn dfs(
        n: &str,
        graph: &BTreeMap<String, Vec<String>>,
        stack: &mut Vec<String>,
        done: &mut BTreeSet<String>,
        found: &mut BTreeSet<Vec<String>>,
    ) {
        if let Some(pos) = stack.iter().position(|s| s == n) {
            let mut cyc: Vec<String> = stack[pos..].to_vec();
            let min = cyc.iter().enumerate().min_by_key(|(_, s)| (*s).clone()).map(|(i, _)| i).unwrap_or(0);
            cyc.rotate_left(min);
            found.insert(cyc);
            return;
        }
        if done.contains(n) {
            return;
        }
        stack.push(n.to_string());
        for m in graph.get(n).into_iter().flatten() {
            if graph.contains_key(m) {
                dfs(m, graph, stack, done, found);
            }
        }
        stack.pop();
        done.insert(n.to_string());
    }
    let mut found = BTreeSet::new();
    let mut done = BTreeSet::new();
    for n in graph.keys() {
        dfs(n, &graph, &mut Vec::new(), &mut done, &mut found);
    }
    found.into_iter().collect()
}

/// Warehouse classes sorted so that every class follows the classes its mapping reads.
fn dependency_order(schema: &WarehouseSchema) -> Result<Vec<String>, Diagnostic> {
    let names: BTreeSet<&str> = schema.classes.iter().map(|c| c.name.as_str()).collect();
    let deps: BTreeMap<String, Vec<String>> = schema
        .classes
        .iter()
        .map(|c| {
            let refs = c
                .mapping
                .as_ref()
                .map(|m| m.class_refs().into_iter().filter(|r| names.contains(r.as_str())).collect())
                .unwrap_or_default();
            (c.name.clone(), refs)
        })
        .collect();
    if let Some(cyc) = cycles(deps.clone()).into_iter().next() {
        return Err(Diagnostic::new(
            format!("class {}", cyc[0]),
            EvalError::DependencyCycle(cyc.join(" -> ")).to_string(),
        ));
    }
    let mut order: Vec<String> = Vec::new();
    let mut placed = BTreeSet::new();
    // declaration order, delayed until dependencies are placed
    while order.len() < schema.classes.len() {
        for c in &schema.classes {
            if !placed.contains(&c.name) && deps[&c.name].iter().all(|d| placed.contains(d)) {
                placed.insert(c.name.clone());
                order.push(c.name.clone());
            }
        }
    }
    Ok(order)
}

/// Check every schema invariant; an empty result means the schema is valid.
pub fn validate_schema(schema: &WarehouseSchema) -> Vec<Diagnostic> {
    let catalog = match Catalog::resolve(schema) {
        Ok(c) => c,
        Err(d) => return d,
    };
    let mut diags = Vec::new();
    for (name, c) in &catalog.classes {
        let loc = format!("class {name}");
        let decl = schema.class(name).expect("resolved from schema");
        for p in &decl.properties {
            match c.field(&p.name) {
                None => diags.push(Diagnostic::new(&loc, format!("declared property `{}` not produced by the mapping", p.name))),
                Some(f) if f.ty != p.ty && f.ty != SemType::Any && p.ty != SemType::Any => diags.push(Diagnostic::new(
                    &loc,
                    format!("declared property `{}` has type {} but the mapping yields {}", p.name, p.ty, f.ty),
                )),
                _ => {}
            }
        }
        for t in &c.tempo_filter {
            if c.field(t).is_none() {
                diags.push(Diagnostic::new(&loc, format!("temporal filter names unknown property `{t}`")));
            }
        }
        for a in &c.archive_filter {
            if !c.is_temporal(&a.property) {
                diags.push(Diagnostic::new(&loc, format!("archive ⊄ tempo: `{}` is not in the temporal filter", a.property)));
                continue;
            }
            let numeric = c.field(&a.property).is_some_and(|f| match &f.ty {
                SemType::Scalar(s) => s.is_numeric(),
                SemType::Any => true,
                _ => false,
            });
            if a.func != AggFn::Count && !numeric {
                diags.push(Diagnostic::new(&loc, format!("{}({}) needs a numeric property", a.func, a.property)));
            }
        }
        for s in &c.supers {
            match catalog.class(s) {
                None => diags.push(Diagnostic::new(&loc, format!("unknown superclass `{s}`"))),
                Some(sup) => {
                    let missing: Vec<&str> =
                        sup.property_names().into_iter().filter(|p| c.field(p).is_none()).collect();
                    if !missing.is_empty() {
                        diags.push(Diagnostic::new(
                            &loc,
                            format!("structure does not contain superclass {s}: missing {{{}}}", missing.join(", ")),
                        ));
                    }
                }
            }
        }
    }
    let graph = catalog.classes.iter().map(|(n, c)| (n.clone(), c.supers.clone())).collect();
    for cycle in cycles(graph) {
        diags.push(Diagnostic::new(format!("class {}", cycle[0]), format!("inheritance cycle {}", cycle.join(" <= "))));
    }

    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for e in &schema.environments {
        let loc = format!("environment {}", e.name);
        for c in &e.classes {
            if schema.class(c).is_none() {
                diags.push(Diagnostic::new(&loc, format!("unknown class `{c}`")));
            } else if let Some(prev) = owner.insert(c, &e.name) {
                diags.push(Diagnostic::new(&loc, format!("class `{c}` already belongs to environment {prev}")));
            }
        }
        if let (Some(ArchiveMode::Temporal(target)), Some(period)) = (e.config.archive_mode, e.config.refresh) {
            if !period.unit.finer_than(target) {
                diags.push(Diagnostic::new(
                    &loc,
                    format!("temporal archive unit {target} is not coarser than the refresh unit {}", period.unit),
                ));
            }
        }
    }

    if diags.is_empty() {
        let report = match crate::analyzer::analyze(&catalog, &BTreeSet::new()) {
            Ok(r) => r,
            Err(e) => {
                diags.push(Diagnostic::new("analysis", e.to_string()));
                return diags;
            }
        };
        for (name, c) in &catalog.classes {
            for call in &c.template.method_calls {
                if !report.is_derivable(&call.method) {
                    diags.push(Diagnostic::new(
                        format!("class {name}"),
                        format!("`{}` augments with non-derivable method {}", call.field, call.method),
                    ));
                }
            }
        }
    }
    diags.sort();
    diags
}
