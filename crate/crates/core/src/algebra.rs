//! Construction algebra: the mapping AST and its evaluator.
//!
//! A mapping is evaluated over a [`SourceSnapshot`]. Besides objects, every
//! [`EvalResult`] carries the provenance needed by the behavior analyzer:
//! which source columns each output field comes from, which relationships
//! were consumed by joins, and which selections restrict the extension.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::predicate::{Atom, CmpOp, Dnf, Path, PredicateError, Term};
use crate::schema::{AggFn, WarehouseSchema};
use crate::temporal::Instant;
use crate::value::{Oid, Scalar, SemType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("name collision on `{0}`")]
    NameCollision(String),
    #[error("`{0}` is not a collection-valued path")]
    NonCollectionPath(String),
    #[error("non-numeric aggregation over `{0}`")]
    NonNumericAgg(String),
    #[error("`{0}` is not a collection of structures")]
    NotACollection(String),
    #[error("operand structures differ: {0}")]
    StructureMismatch(String),
    #[error("masking removes every property")]
    EmptyStructure,
    #[error("dependency cycle between class mappings: {0}")]
    DependencyCycle(String),
}

impl From<PredicateError> for EvalError {
    fn from(e: PredicateError) -> Self {
        match e {
            PredicateError::UnknownPath(p) => EvalError::UnknownProperty(p),
            PredicateError::TypeMismatch(a, b) => {
                EvalError::TypeMismatch(format!("cannot compare {a} with {b}"))
            }
            PredicateError::NotACollection(p) => EvalError::NotACollection(p),
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

/// An operand with its optional alias: `(o PRATICIEN)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bound {
    pub alias: Option<String>,
    pub expr: MappingExpr,
}

impl Bound {
    pub fn new(alias: Option<&str>, expr: MappingExpr) -> Self {
        Bound { alias: alias.map(str::to_string), expr }
    }

    pub fn class(alias: Option<&str>, name: &str) -> Self {
        Bound::new(alias, MappingExpr::ClassRef(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AugmentSource {
    Agg { func: AggFn, path: Path },
    /// Source method call; `class` qualifies the method when given.
    Method { class: Option<String>, method: String },
    Specific(SemType),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentBinding {
    pub name: String,
    pub source: AugmentSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingExpr {
    ClassRef(String),
    Project { props: Vec<Path>, input: Box<Bound> },
    Mask { props: Vec<Path>, input: Box<Bound> },
    Augment { bindings: Vec<AugmentBinding>, input: Box<Bound> },
    Select { pred: Dnf, input: Box<Bound> },
    Join { pred: Dnf, left: Box<Bound>, right: Box<Bound> },
    Nest { group: Vec<Path>, attr: String, input: Box<Bound> },
    Unnest { props: Vec<Path>, input: Box<Bound> },
    Union(Box<Bound>, Box<Bound>),
    Intersect(Box<Bound>, Box<Bound>),
    Diff(Box<Bound>, Box<Bound>),
    Generalize { props: Vec<Path>, inputs: Vec<Bound> },
    Specialize { pred: Dnf, inputs: Vec<Bound> },
}

impl MappingExpr {
    pub fn operands(&self) -> Vec<&Bound> {
        match self {
            MappingExpr::ClassRef(_) => vec![],
            MappingExpr::Project { input, .. }
            | MappingExpr::Mask { input, .. }
            | MappingExpr::Augment { input, .. }
            | MappingExpr::Select { input, .. }
            | MappingExpr::Nest { input, .. }
            | MappingExpr::Unnest { input, .. } => vec![input],
            MappingExpr::Join { left, right, .. } => vec![left, right],
            MappingExpr::Union(a, b) | MappingExpr::Intersect(a, b) | MappingExpr::Diff(a, b) => {
                vec![a, b]
            }
            MappingExpr::Generalize { inputs, .. } | MappingExpr::Specialize { inputs, .. } => {
                inputs.iter().collect()
            }
        }
    }

    /// Every class name referenced by a leaf.
    pub fn class_refs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let MappingExpr::ClassRef(c) = e {
                out.insert(c.clone());
            }
        });
        out
    }

    pub fn walk(&self, f: &mut impl FnMut(&MappingExpr)) {
        f(self);
        for b in self.operands() {
            b.expr.walk(f);
        }
    }

    pub fn is_hierarchy(&self) -> bool {
        matches!(self, MappingExpr::Generalize { .. } | MappingExpr::Specialize { .. })
    }
}

// ---------------------------------------------------------------------------
// Snapshot and results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceObject {
    pub oid: Oid,
    pub values: BTreeMap<String, Value>,
}

/// Objects of the integrated source at one instant, listed under their most
/// specific class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceSnapshot {
    pub at: Option<Instant>,
    pub classes: BTreeMap<String, Vec<SourceObject>>,
}

impl SourceSnapshot {
    pub fn empty() -> Self {
        SourceSnapshot::default()
    }
}

/// A source property column: defining class plus leaf path (`adresse.ville`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Column {
    pub class: String,
    pub path: String,
}

impl Column {
    pub fn new(class: &str, path: &str) -> Self {
        Column { class: class.to_string(), path: path.to_string() }
    }

    /// Top-level property name of the column.
    pub fn property(&self) -> &str {
        self.path.split('.').next().unwrap_or(&self.path)
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.class, self.path)
    }
}

/// Where (part of) a field comes from. `subpath` locates the part inside the
/// field's value; `instance` is the class whose objects supplied it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Origin {
    pub subpath: String,
    pub instance: String,
    pub column: Column,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub ty: SemType,
    pub origins: Vec<Origin>,
}

impl Field {
    fn rename_prefix(&self) -> Option<&str> {
        self.origins.first().map(|o| o.column.class.as_str())
    }

    fn sub_origins(&self, rest: &[String]) -> Vec<Origin> {
        if rest.is_empty() {
            return self.origins.clone();
        }
        let prefix = rest.join(".");
        let dotted = format!("{prefix}.");
        self.origins
            .iter()
            .filter_map(|o| {
                let sub = if o.subpath == prefix {
                    String::new()
                } else {
                    o.subpath.strip_prefix(&dotted)?.to_string()
                };
                Some(Origin { subpath: sub, ..o.clone() })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DerivedProp {
    Column(Column),
    Computed(String),
}

/// A relationship consumed by a join between its owner and target classes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct JoinLink {
    pub relationship: Column,
    pub owner: String,
    pub target: String,
}

/// One atom of an extension restriction; `column == None` marks a
/// constraint that cannot be reasoned about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelAtom {
    pub column: Option<Column>,
    pub op: CmpOp,
    pub value: Value,
}

/// Restriction on the extension, in DNF. `[[]]` means unrestricted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restriction(pub Vec<Vec<SelAtom>>);

impl Restriction {
    pub fn none() -> Self {
        Restriction(vec![vec![]])
    }

    pub fn unknown() -> Self {
        Restriction(vec![vec![SelAtom {
            column: None,
            op: CmpOp::Eq,
            value: Value::Null,
        }]])
    }

    pub fn and(&self, other: &Restriction) -> Restriction {
        let mut out = Vec::new();
        for a in &self.0 {
            for b in &other.0 {
                let mut c = a.clone();
                c.extend(b.iter().cloned());
                out.push(c);
            }
        }
        Restriction(out)
    }

    pub fn or(&self, other: &Restriction) -> Restriction {
        let mut out = self.0.clone();
        out.extend(other.0.iter().cloned());
        Restriction(out)
    }
}

/// An object produced by evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub key: Value,
    pub values: BTreeMap<String, Value>,
    /// Source oid when the row is still one source object.
    pub identity: Option<Oid>,
}

impl Row {
    pub fn value(&self) -> Value {
        Value::Struct(self.values.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodCallSite {
    pub field: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HierarchyEdge {
    /// The evaluated class becomes a superclass of these classes.
    Generalize { subclasses: Vec<String> },
    /// The evaluated class becomes a subclass of these classes.
    Specialize { supers: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub structure: Vec<Field>,
    pub objects: Vec<Row>,
    pub involved_classes: BTreeSet<String>,
    /// Class of the source objects rows stand for, if rows are still single objects.
    pub identity_class: Option<String>,
    pub links: Vec<JoinLink>,
    pub restriction: Restriction,
    pub method_calls: Vec<MethodCallSite>,
    pub hierarchy: Option<HierarchyEdge>,
}

impl EvalResult {
    pub fn field(&self, name: &str) -> Option<&Field> {
        self.structure.iter().find(|f| f.name == name)
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.structure.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn struct_type(&self) -> SemType {
        SemType::Struct {
            name: None,
            fields: self.structure.iter().map(|f| (f.name.clone(), f.ty.clone())).collect(),
        }
    }

    /// Source columns and computed properties present in this result. A
    /// join relationship counts as derived while both joined sides keep
    /// at least one field.
    pub fn derived_props(&self) -> BTreeSet<DerivedProp> {
        let mut out = BTreeSet::new();
        let mut instances = BTreeSet::new();
        for f in &self.structure {
            if f.origins.is_empty() {
                out.insert(DerivedProp::Computed(f.name.clone()));
            }
            for o in &f.origins {
                out.insert(DerivedProp::Column(o.column.clone()));
                instances.insert(o.instance.as_str());
            }
        }
        for link in &self.links {
            if instances.contains(link.owner.as_str()) && instances.contains(link.target.as_str()) {
                out.insert(DerivedProp::Column(link.relationship.clone()));
            }
        }
        out
    }

    fn with_rows(&self, objects: Vec<Row>) -> EvalResult {
        EvalResult { objects, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// Path scopes
// ---------------------------------------------------------------------------

enum Resolved<'a, 'p> {
    Identity(usize),
    Field { op: usize, field: &'a Field, rest: &'p [String] },
}

struct Scope<'a> {
    operands: Vec<(Option<&'a str>, &'a EvalResult)>,
}

impl<'a> Scope<'a> {
    fn single(alias: Option<&'a str>, r: &'a EvalResult) -> Self {
        Scope { operands: vec![(alias, r)] }
    }

    fn resolve<'p>(&self, path: &'p Path) -> Result<Resolved<'a, 'p>> {
        let segs = path.segments();
        let unknown = || EvalError::UnknownProperty(path.to_string());
        let head = segs.first().ok_or_else(unknown)?;
        let aliased = self.operands.iter().position(|(a, _)| *a == Some(head.as_str()));
        let (op, rest) = match aliased {
            Some(op) if segs.len() == 1 => return Ok(Resolved::Identity(op)),
            Some(op) => (op, &segs[1..]),
            None => {
                let hits: Vec<usize> = self
                    .operands
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, r))| r.field(head).is_some())
                    .map(|(i, _)| i)
                    .collect();
                match hits.as_slice() {
                    [one] => (*one, segs),
                    [] => return Err(unknown()),
                    _ => return Err(EvalError::UnknownProperty(format!("{path} (ambiguous)"))),
                }
            }
        };
        let field = self.operands[op].1.field(&rest[0]).ok_or_else(unknown)?;
        if field.ty != SemType::Any && field.ty.path(&rest[1..]).is_none() {
            return Err(unknown());
        }
        Ok(Resolved::Field { op, field, rest: &rest[1..] })
    }

    fn type_of(&self, r: &Resolved) -> SemType {
        match r {
            Resolved::Identity(op) => match &self.operands[*op].1.identity_class {
                Some(c) => SemType::Ref(c.clone()),
                None => SemType::Any,
            },
            Resolved::Field { field, rest, .. } => {
                field.ty.path(rest).cloned().unwrap_or(SemType::Any)
            }
        }
    }

    fn value(&self, r: &Resolved, rows: &[&Row]) -> Result<Value> {
        match r {
            Resolved::Identity(op) => match &rows[*op].identity {
                Some(oid) => Ok(Value::Ref(oid.clone())),
                None => Err(EvalError::TypeMismatch("operand rows have no object identity".into())),
            },
            Resolved::Field { op, field, rest } => {
                let mut v = rows[*op].values.get(&field.name).cloned().unwrap_or(Value::Null);
                for s in rest.iter() {
                    v = match v {
                        Value::Null => Value::Null,
                        Value::Struct(mut m) => m.remove(s).unwrap_or(Value::Null),
                        _ => return Err(EvalError::UnknownProperty(s.clone())),
                    };
                }
                Ok(v)
            }
        }
    }

    fn check_pred(&self, pred: &Dnf) -> Result<()> {
        for atom in pred.atoms() {
            let paths: Vec<&Path> = match atom {
                Atom::Cmp { left, right, .. } => [left, right]
                    .into_iter()
                    .filter_map(|t| match t {
                        Term::Path(p) => Some(p),
                        Term::Lit(_) => None,
                    })
                    .collect(),
                Atom::Member { elem, coll } => {
                    let mut v = vec![coll];
                    if let Term::Path(p) = elem {
                        v.push(p);
                    }
                    v
                }
                Atom::Const(_) => vec![],
            };
            for p in paths {
                self.resolve(p)?;
            }
        }
        Ok(())
    }

    fn eval_pred(&self, pred: &Dnf, rows: &[&Row]) -> Result<bool> {
        let resolve = |p: &Path| -> std::result::Result<Value, PredicateError> {
            let r = self.resolve(p).map_err(|_| PredicateError::UnknownPath(p.to_string()))?;
            self.value(&r, rows).map_err(|e| match e {
                EvalError::TypeMismatch(m) => PredicateError::TypeMismatch(p.to_string(), m),
                _ => PredicateError::UnknownPath(p.to_string()),
            })
        };
        Ok(pred.eval(&resolve)?)
    }

    /// Column a comparison path points at, when it maps to exactly one source leaf.
    fn column_of(&self, path: &Path) -> Option<Column> {
        match self.resolve(path).ok()? {
            Resolved::Field { field, rest, .. } => {
                let origins = field.sub_origins(rest);
                match origins.as_slice() {
                    [o] if o.subpath.is_empty() => Some(o.column.clone()),
                    _ => None,
                }
            }
            Resolved::Identity(_) => None,
        }
    }

    fn restriction(&self, pred: &Dnf) -> Restriction {
        let mut out = Vec::new();
        'conj: for conj in &pred.0 {
            let mut atoms = Vec::new();
            for atom in &conj.0 {
                let sel = match atom {
                    Atom::Const(true) => continue,
                    Atom::Const(false) => continue 'conj,
                    Atom::Cmp { left: Term::Path(p), op, right: Term::Lit(v) } => {
                        SelAtom { column: self.column_of(p), op: *op, value: v.clone() }
                    }
                    Atom::Cmp { left: Term::Lit(v), op, right: Term::Path(p) } => {
                        SelAtom { column: self.column_of(p), op: op.flip(), value: v.clone() }
                    }
                    _ => SelAtom { column: None, op: CmpOp::Eq, value: Value::Null },
                };
                atoms.push(sel);
            }
            out.push(atoms);
        }
        Restriction(out)
    }

    /// Relationships used in `rel = alias` / `alias in rel` atoms.
    fn links(&self, pred: &Dnf) -> Vec<JoinLink> {
        let mut out = Vec::new();
        let mut link = |rel: &Path, obj: &Path| {
            let (Ok(Resolved::Field { field, rest, .. }), Ok(Resolved::Identity(op))) =
                (self.resolve(rel), self.resolve(obj))
            else {
                return;
            };
            let Some(target) = self.operands[op].1.identity_class.clone() else { return };
            if field.ty.path(rest).and_then(SemType::ref_target).is_none() {
                return;
            }
            if let [o] = field.sub_origins(rest).as_slice() {
                out.push(JoinLink {
                    relationship: o.column.clone(),
                    owner: o.instance.clone(),
                    target,
                });
            }
        };
        for atom in pred.atoms() {
            match atom {
                Atom::Cmp { left: Term::Path(a), op: CmpOp::Eq, right: Term::Path(b) } => {
                    link(a, b);
                    link(b, a);
                }
                Atom::Member { elem: Term::Path(e), coll } => link(coll, e),
                _ => {}
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Evaluation context: schema, snapshot and already evaluated warehouse classes.
pub struct EvalContext<'a> {
    pub schema: &'a WarehouseSchema,
    pub snapshot: &'a SourceSnapshot,
    pub classes: BTreeMap<String, EvalResult>,
}

impl<'a> EvalContext<'a> {
    pub fn new(schema: &'a WarehouseSchema, snapshot: &'a SourceSnapshot) -> Self {
        EvalContext { schema, snapshot, classes: BTreeMap::new() }
    }
}

/// Evaluate a mapping expression.
pub fn eval(e: &MappingExpr, ctx: &EvalContext) -> Result<EvalResult> {
    match e {
        MappingExpr::ClassRef(name) => eval_class_ref(name, ctx),
        MappingExpr::Project { props, input } => {
            let r = eval(&input.expr, ctx)?;
            eval_project(props, input.alias.as_deref(), r)
        }
        MappingExpr::Mask { props, input } => {
            let r = eval(&input.expr, ctx)?;
            eval_mask(props, input.alias.as_deref(), r)
        }
        MappingExpr::Augment { bindings, input } => {
            let r = eval(&input.expr, ctx)?;
            eval_augment(bindings, input.alias.as_deref(), r, ctx.schema)
        }
        MappingExpr::Select { pred, input } => {
            let r = eval(&input.expr, ctx)?;
            eval_select(pred, input.alias.as_deref(), r)
        }
        MappingExpr::Join { pred, left, right } => {
            let a = eval(&left.expr, ctx)?;
            let b = eval(&right.expr, ctx)?;
            eval_join(pred, (left.alias.as_deref(), a), (right.alias.as_deref(), b))
        }
        MappingExpr::Nest { group, attr, input } => {
            let r = eval(&input.expr, ctx)?;
            eval_nest(group, attr, input.alias.as_deref(), r)
        }
        MappingExpr::Unnest { props, input } => {
            let r = eval(&input.expr, ctx)?;
            eval_unnest(props, input.alias.as_deref(), r)
        }
        MappingExpr::Union(a, b) => eval_union(eval(&a.expr, ctx)?, eval(&b.expr, ctx)?),
        MappingExpr::Intersect(a, b) => eval_intersect(eval(&a.expr, ctx)?, eval(&b.expr, ctx)?),
        MappingExpr::Diff(a, b) => eval_diff(eval(&a.expr, ctx)?, eval(&b.expr, ctx)?),
        MappingExpr::Generalize { props, inputs } => {
            let mut ops = Vec::new();
            for b in inputs {
                ops.push((b.alias.clone(), class_name_of(&b.expr), eval(&b.expr, ctx)?));
            }
            eval_generalize(props, ops)
        }
        MappingExpr::Specialize { pred, inputs } => {
            let mut ops = Vec::new();
            for b in inputs {
                ops.push((b.alias.clone(), class_name_of(&b.expr), eval(&b.expr, ctx)?));
            }
            eval_specialize(pred, ops)
        }
    }
}

fn class_name_of(e: &MappingExpr) -> Option<String> {
    match e {
        MappingExpr::ClassRef(c) => Some(c.clone()),
        _ => None,
    }
}

fn eval_class_ref(name: &str, ctx: &EvalContext) -> Result<EvalResult> {
    if let Some(r) = ctx.classes.get(name) {
        return Ok(EvalResult {
            identity_class: None,
            method_calls: Vec::new(),
            hierarchy: None,
            objects: r.objects.iter().map(|o| Row { identity: None, ..o.clone() }).collect(),
            ..r.clone()
        });
    }
    let schema = ctx.schema;
    if schema.source(name).is_none() {
        return Err(EvalError::UnknownClass(name.to_string()));
    }
    let props = schema.flattened_properties(name);
    let structure: Vec<Field> = props
        .iter()
        .map(|(defining, p)| Field {
            name: p.name.clone(),
            ty: p.ty.clone(),
            origins: p
                .ty
                .leaf_paths()
                .into_iter()
                .map(|leaf| Origin {
                    column: Column::new(
                        defining,
                        &if leaf.is_empty() { p.name.clone() } else { format!("{}.{leaf}", p.name) },
                    ),
                    subpath: leaf,
                    instance: name.to_string(),
                })
                .collect(),
        })
        .collect();
    let mut involved: BTreeSet<String> = schema.source_ancestors(name).into_iter().collect();
    involved.insert(name.to_string());

    let mut seen = BTreeSet::new();
    let mut objects = Vec::new();
    let extents = std::iter::once(name.to_string()).chain(schema.source_descendants(name));
    for class in extents {
        for obj in ctx.snapshot.classes.get(&class).into_iter().flatten() {
            if !seen.insert(obj.oid.clone()) {
                continue;
            }
            let values = structure
                .iter()
                .map(|f| (f.name.clone(), obj.values.get(&f.name).cloned().unwrap_or(Value::Null)))
                .collect();
            objects.push(Row { key: Value::Ref(obj.oid.clone()), values, identity: Some(obj.oid.clone()) });
        }
    }
    Ok(EvalResult {
        structure,
        objects,
        involved_classes: involved,
        identity_class: Some(name.to_string()),
        links: Vec::new(),
        restriction: Restriction::none(),
        method_calls: Vec::new(),
        hierarchy: None,
    })
}

/// π: keep the listed (possibly dotted) properties; output fields are named by leaf.
pub fn eval_project(props: &[Path], alias: Option<&str>, input: EvalResult) -> Result<EvalResult> {
    let scope = Scope::single(alias, &input);
    let mut resolved = Vec::new();
    for p in props {
        match scope.resolve(p)? {
            Resolved::Identity(_) => return Err(EvalError::UnknownProperty(p.to_string())),
            Resolved::Field { field, rest, .. } => {
                let ty = field.ty.path(rest).cloned().unwrap_or(SemType::Any);
                resolved.push((p, field, rest, ty));
            }
        }
    }
    let mut names: Vec<String> = resolved.iter().map(|(p, ..)| p.leaf().to_string()).collect();
    for k in 0..names.len() {
        if names.iter().filter(|n| **n == names[k]).count() > 1 {
            let clashing = names[k].clone();
            for (j, n) in names.iter_mut().enumerate() {
                if *n == clashing {
                    let prefix = resolved[j].1.rename_prefix().unwrap_or_default();
                    *n = format!("{prefix}{clashing}");
                }
            }
        }
    }
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() != names.len() {
        let dup = names.iter().find(|n| names.iter().filter(|m| m == n).count() > 1);
        return Err(EvalError::NameCollision(dup.cloned().unwrap_or_default()));
    }
    let structure: Vec<Field> = resolved
        .iter()
        .zip(&names)
        .map(|((_, field, rest, ty), name)| Field {
            name: name.clone(),
            ty: ty.clone(),
            origins: field.sub_origins(rest),
        })
        .collect();
    let mut objects = Vec::with_capacity(input.objects.len());
    for row in &input.objects {
        let mut values = BTreeMap::new();
        for ((p, ..), name) in resolved.iter().zip(&names) {
            let r = scope.resolve(p)?;
            values.insert(name.clone(), scope.value(&r, &[row])?);
        }
        objects.push(Row { key: row.key.clone(), values, identity: row.identity.clone() });
    }
    let method_calls = input
        .method_calls
        .iter()
        .filter(|m| names.contains(&m.field))
        .cloned()
        .collect();
    Ok(EvalResult { structure, objects, method_calls, ..input })
}

fn top_level_name(p: &Path, alias: Option<&str>, input: &EvalResult) -> Result<String> {
    match p.strip_alias(alias) {
        [name] if input.field(name).is_some() => Ok(name.clone()),
        _ => Err(EvalError::UnknownProperty(p.to_string())),
    }
}

/// μ: keep everything except the listed properties.
pub fn eval_mask(props: &[Path], alias: Option<&str>, input: EvalResult) -> Result<EvalResult> {
    let mut hidden = BTreeSet::new();
    for p in props {
        hidden.insert(top_level_name(p, alias, &input)?);
    }
    let keep: Vec<Path> = input
        .structure
        .iter()
        .filter(|f| !hidden.contains(&f.name))
        .map(|f| Path(vec![f.name.clone()]))
        .collect();
    if keep.is_empty() {
        return Err(EvalError::EmptyStructure);
    }
    eval_project(&keep, None, input)
}

fn agg_result_type(func: AggFn, elem: &SemType) -> SemType {
    match func {
        AggFn::Count => SemType::Scalar(Scalar::Long),
        AggFn::Avg => SemType::Scalar(Scalar::Double),
        AggFn::Sum => match elem {
            SemType::Scalar(s) if s.is_integral() => SemType::Scalar(Scalar::Long),
            _ => SemType::Scalar(Scalar::Double),
        },
        AggFn::Max | AggFn::Min => elem.clone(),
    }
}

/// Fold one aggregation function over sample values. Nulls are skipped;
/// anything but `count` over no samples is null.
pub fn aggregate(func: AggFn, samples: &[Value]) -> std::result::Result<Value, String> {
    let present: Vec<&Value> = samples.iter().filter(|v| !v.is_null()).collect();
    if func == AggFn::Count {
        return Ok(Value::Int(present.len() as i64));
    }
    if let Some(bad) = present.iter().find(|v| v.as_f64().is_none()) {
        return Err(bad.to_string());
    }
    if present.is_empty() {
        return Ok(Value::Null);
    }
    let all_int = present.iter().all(|v| matches!(v, Value::Int(_)));
    Ok(match func {
        AggFn::Sum if all_int => {
            Value::Int(present.iter().map(|v| if let Value::Int(i) = v { *i } else { 0 }).sum())
        }
        AggFn::Sum => Value::Float(present.iter().filter_map(|v| v.as_f64()).sum()),
        AggFn::Avg => {
            let total: f64 = present.iter().filter_map(|v| v.as_f64()).sum();
            Value::Float(total / present.len() as f64)
        }
        AggFn::Max => present.iter().copied().max_by(|a, b| a.compare(b).unwrap_or(std::cmp::Ordering::Equal)).cloned().unwrap_or(Value::Null),
        AggFn::Min => present.iter().copied().min_by(|a, b| a.compare(b).unwrap_or(std::cmp::Ordering::Equal)).cloned().unwrap_or(Value::Null),
        AggFn::Count => unreachable!("handled above"),
    })
}

/// α: add computed or administrator-specific properties.
pub fn eval_augment(
    bindings: &[AugmentBinding],
    alias: Option<&str>,
    input: EvalResult,
    schema: &WarehouseSchema,
) -> Result<EvalResult> {
    let mut out = input.clone();
    let scope = Scope::single(alias, &input);
    let mut computed: Vec<(String, Option<(AggFn, &Path)>)> = Vec::new();
    for b in bindings {
        if out.field(&b.name).is_some() {
            return Err(EvalError::NameCollision(b.name.clone()));
        }
        let ty = match &b.source {
            AugmentSource::Agg { func, path } => {
                let r = scope.resolve(path)?;
                let ty = scope.type_of(&r);
                let elem = match &ty {
                    SemType::Any => SemType::Any,
                    t => t
                        .element()
                        .cloned()
                        .ok_or_else(|| EvalError::NonCollectionPath(path.to_string()))?,
                };
                let numeric = matches!(&elem, SemType::Any)
                    || matches!(&elem, SemType::Scalar(s) if s.is_numeric());
                if *func != AggFn::Count && !numeric {
                    return Err(EvalError::NonNumericAgg(path.to_string()));
                }
                computed.push((b.name.clone(), Some((*func, path))));
                agg_result_type(*func, &elem)
            }
            AugmentSource::Method { class, method } => {
                let qualified = match class {
                    Some(c) => schema.resolve_method(c, method),
                    None => input
                        .involved_classes
                        .iter()
                        .find_map(|c| schema.resolve_method(c, method)),
                }
                .ok_or_else(|| EvalError::UnknownMethod(method.clone()))?;
                let (_, sig) = schema
                    .method(&qualified)
                    .ok_or_else(|| EvalError::UnknownMethod(qualified.clone()))?;
                out.method_calls.push(MethodCallSite { field: b.name.clone(), method: qualified });
                computed.push((b.name.clone(), None));
                sig.return_type.clone().unwrap_or(SemType::Any)
            }
            AugmentSource::Specific(ty) => {
                computed.push((b.name.clone(), None));
                ty.clone()
            }
        };
        out.structure.push(Field { name: b.name.clone(), ty, origins: Vec::new() });
    }
    for (row, src) in out.objects.iter_mut().zip(&input.objects) {
        for (name, agg) in &computed {
            let v = match agg {
                None => Value::Null,
                Some((func, path)) => {
                    let r = scope.resolve(path)?;
                    match scope.value(&r, &[src])? {
                        Value::Null => aggregate(*func, &[]),
                        Value::Set(m) | Value::List(m) => aggregate(*func, &m),
                        _ => return Err(EvalError::NonCollectionPath(path.to_string())),
                    }
                    .map_err(|_| EvalError::NonNumericAgg(path.to_string()))?
                }
            };
            row.values.insert(name.clone(), v);
        }
    }
    Ok(out)
}

/// σ: keep the objects satisfying the predicate.
pub fn eval_select(pred: &Dnf, alias: Option<&str>, input: EvalResult) -> Result<EvalResult> {
    let scope = Scope::single(alias, &input);
    scope.check_pred(pred)?;
    let mut kept = Vec::new();
    for row in &input.objects {
        if scope.eval_pred(pred, &[row])? {
            kept.push(row.clone());
        }
    }
    let restriction = input.restriction.and(&scope.restriction(pred));
    Ok(EvalResult { restriction, ..input.with_rows(kept) })
}

/// ⋈: filtered cartesian product; clashing field names get their defining class as prefix.
pub fn eval_join(
    pred: &Dnf,
    left: (Option<&str>, EvalResult),
    right: (Option<&str>, EvalResult),
) -> Result<EvalResult> {
    let (la, a) = left;
    let (ra, b) = right;
    let scope = Scope { operands: vec![(la, &a), (ra, &b)] };
    scope.check_pred(pred)?;

    let rename = |f: &Field, other: &EvalResult, alias: Option<&str>| -> Result<String> {
        if other.field(&f.name).is_none() {
            return Ok(f.name.clone());
        }
        let prefix = f
            .rename_prefix()
            .or(alias)
            .ok_or_else(|| EvalError::NameCollision(f.name.clone()))?;
        Ok(format!("{prefix}{}", f.name))
    };
    let mut structure = Vec::new();
    let mut left_names = Vec::new();
    for f in &a.structure {
        let n = rename(f, &b, la)?;
        left_names.push((f.name.clone(), n.clone()));
        structure.push(Field { name: n, ..f.clone() });
    }
    let mut right_names = Vec::new();
    for f in &b.structure {
        let n = rename(f, &a, ra)?;
        right_names.push((f.name.clone(), n.clone()));
        structure.push(Field { name: n, ..f.clone() });
    }
    let names: BTreeSet<&str> = structure.iter().map(|f| f.name.as_str()).collect();
    if names.len() != structure.len() {
        return Err(EvalError::NameCollision("join output".into()));
    }

    let mut objects = Vec::new();
    for x in &a.objects {
        for y in &b.objects {
            if !scope.eval_pred(pred, &[x, y])? {
                continue;
            }
            let mut values = BTreeMap::new();
            for (old, new) in &left_names {
                values.insert(new.clone(), x.values.get(old).cloned().unwrap_or(Value::Null));
            }
            for (old, new) in &right_names {
                values.insert(new.clone(), y.values.get(old).cloned().unwrap_or(Value::Null));
            }
            objects.push(Row {
                key: Value::List(vec![x.key.clone(), y.key.clone()]),
                values,
                identity: None,
            });
        }
    }
    let mut links = a.links.clone();
    links.extend(b.links.iter().cloned());
    links.extend(scope.links(pred));
    let mut method_calls = a.method_calls.clone();
    method_calls.extend(b.method_calls.iter().cloned());
    Ok(EvalResult {
        structure,
        objects,
        involved_classes: a.involved_classes.union(&b.involved_classes).cloned().collect(),
        identity_class: None,
        links,
        restriction: a.restriction.and(&b.restriction).and(&scope.restriction(pred)),
        method_calls,
        hierarchy: None,
    })
}

/// η: one object per distinct group value; the other fields collected into `attr`.
pub fn eval_nest(group: &[Path], attr: &str, alias: Option<&str>, input: EvalResult) -> Result<EvalResult> {
    let mut group_names = Vec::new();
    for p in group {
        group_names.push(top_level_name(p, alias, &input)?);
    }
    if input.field(attr).is_some() || group_names.iter().any(|g| g == attr) {
        return Err(EvalError::NameCollision(attr.to_string()));
    }
    let rest: Vec<&Field> = input.structure.iter().filter(|f| !group_names.contains(&f.name)).collect();
    let mut structure: Vec<Field> = group_names
        .iter()
        .map(|g| input.field(g).cloned().expect("checked above"))
        .collect();
    structure.push(Field {
        name: attr.to_string(),
        ty: SemType::Set(Box::new(SemType::Struct {
            name: None,
            fields: rest.iter().map(|f| (f.name.clone(), f.ty.clone())).collect(),
        })),
        origins: rest
            .iter()
            .flat_map(|f| {
                f.origins.iter().map(|o| Origin {
                    subpath: if o.subpath.is_empty() {
                        f.name.clone()
                    } else {
                        format!("{}.{}", f.name, o.subpath)
                    },
                    ..o.clone()
                })
            })
            .collect(),
    });

    let mut order: Vec<Vec<Value>> = Vec::new();
    let mut groups: BTreeMap<Vec<Value>, Vec<Value>> = BTreeMap::new();
    for row in &input.objects {
        let key: Vec<Value> = group_names
            .iter()
            .map(|g| row.values.get(g).cloned().unwrap_or(Value::Null))
            .collect();
        let member = Value::Struct(
            rest.iter()
                .map(|f| (f.name.clone(), row.values.get(&f.name).cloned().unwrap_or(Value::Null)))
                .collect(),
        );
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Vec::new()
        });
        entry.push(member);
    }
    let objects = order
        .into_iter()
        .map(|key| {
            let members = groups.remove(&key).unwrap_or_default();
            let mut values: BTreeMap<String, Value> =
                group_names.iter().cloned().zip(key.iter().cloned()).collect();
            values.insert(attr.to_string(), Value::set(members));
            Row { key: Value::List(key), values, identity: None }
        })
        .collect();
    let method_calls = input
        .method_calls
        .iter()
        .filter(|m| group_names.contains(&m.field))
        .cloned()
        .collect();
    Ok(EvalResult { structure, objects, identity_class: None, method_calls, ..input })
}

/// η⁻¹: one object per member of the cross product of the named collections.
pub fn eval_unnest(props: &[Path], alias: Option<&str>, input: EvalResult) -> Result<EvalResult> {
    let mut names = Vec::new();
    for p in props {
        let n = top_level_name(p, alias, &input)?;
        let f = input.field(&n).expect("checked");
        if f.ty.element().is_none() && f.ty != SemType::Any {
            return Err(EvalError::NotACollection(n));
        }
        names.push(n);
    }
    let mut structure: Vec<Field> =
        input.structure.iter().filter(|f| !names.contains(&f.name)).cloned().collect();
    // member fields flattened from each unnested collection
    let mut flattened: Vec<(String, Vec<String>)> = Vec::new();
    for n in &names {
        let f = input.field(n).expect("checked");
        let elem = f.ty.element().cloned().unwrap_or(SemType::Any);
        let members: Vec<String> = match &elem {
            SemType::Struct { fields, .. } => {
                for (mname, mty) in fields {
                    let origins = f.sub_origins(std::slice::from_ref(mname));
                    structure.push(Field { name: mname.clone(), ty: mty.clone(), origins });
                }
                fields.iter().map(|(m, _)| m.clone()).collect()
            }
            other => {
                structure.push(Field { name: n.clone(), ty: other.clone(), origins: f.origins.clone() });
                Vec::new()
            }
        };
        flattened.push((n.clone(), members));
    }
    let unique: BTreeSet<&str> = structure.iter().map(|f| f.name.as_str()).collect();
    if unique.len() != structure.len() {
        return Err(EvalError::NameCollision("unnest output".into()));
    }

    let mut objects = Vec::new();
    for row in &input.objects {
        let mut partial: Vec<(BTreeMap<String, Value>, Vec<Value>)> = vec![(
            row.values
                .iter()
                .filter(|(k, _)| !names.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            Vec::new(),
        )];
        for (n, member_fields) in &flattened {
            let coll = row.values.get(n).cloned().unwrap_or(Value::Null);
            let members: Vec<Value> = match coll {
                Value::Null => Vec::new(),
                Value::Set(m) | Value::List(m) => m,
                _ => return Err(EvalError::NotACollection(n.clone())),
            };
            let mut next = Vec::new();
            for (vals, picked) in &partial {
                for m in &members {
                    let mut v = vals.clone();
                    if member_fields.is_empty() {
                        v.insert(n.clone(), m.clone());
                    } else {
                        for mf in member_fields {
                            v.insert(mf.clone(), m.field(mf).cloned().unwrap_or(Value::Null));
                        }
                    }
                    let mut p = picked.clone();
                    p.push(m.clone());
                    next.push((v, p));
                }
            }
            partial = next;
        }
        for (values, picked) in partial {
            objects.push(Row {
                key: Value::List(vec![row.key.clone(), Value::List(picked)]),
                values,
                identity: None,
            });
        }
    }
    Ok(EvalResult { structure, objects, identity_class: None, ..input })
}

fn same_structure(a: &EvalResult, b: &EvalResult) -> Result<()> {
    let sig = |r: &EvalResult| -> BTreeMap<String, SemType> {
        r.structure.iter().map(|f| (f.name.clone(), f.ty.clone())).collect()
    };
    if sig(a) != sig(b) {
        return Err(EvalError::StructureMismatch(format!(
            "{{{}}} vs {{{}}}",
            a.field_names().join(", "),
            b.field_names().join(", ")
        )));
    }
    Ok(())
}

fn merge_operands(a: &EvalResult, b: &EvalResult, objects: Vec<Row>, restriction: Restriction) -> EvalResult {
    let structure = a
        .structure
        .iter()
        .map(|f| {
            let mut origins = f.origins.clone();
            if let Some(g) = b.field(&f.name) {
                for o in &g.origins {
                    if !origins.contains(o) {
                        origins.push(o.clone());
                    }
                }
            }
            Field { origins, ..f.clone() }
        })
        .collect();
    let mut links = a.links.clone();
    links.extend(b.links.iter().cloned());
    let mut method_calls = a.method_calls.clone();
    method_calls.extend(b.method_calls.iter().cloned());
    EvalResult {
        structure,
        objects,
        involved_classes: a.involved_classes.union(&b.involved_classes).cloned().collect(),
        identity_class: if a.identity_class == b.identity_class { a.identity_class.clone() } else { None },
        links,
        restriction,
        method_calls,
        hierarchy: None,
    }
}

fn dedup_by_value(rows: &[Row]) -> Vec<Row> {
    let mut seen = BTreeSet::new();
    rows.iter().filter(|r| seen.insert(r.values.clone())).cloned().collect()
}

/// ∪ over object values.
pub fn eval_union(a: EvalResult, b: EvalResult) -> Result<EvalResult> {
    same_structure(&a, &b)?;
    let mut rows = a.objects.clone();
    rows.extend(b.objects.iter().cloned());
    let objects = dedup_by_value(&rows);
    let restriction = a.restriction.or(&b.restriction);
    Ok(merge_operands(&a, &b, objects, restriction))
}

/// ∩ over object values.
pub fn eval_intersect(a: EvalResult, b: EvalResult) -> Result<EvalResult> {
    same_structure(&a, &b)?;
    let right: BTreeSet<&BTreeMap<String, Value>> = b.objects.iter().map(|r| &r.values).collect();
    let objects: Vec<Row> =
        dedup_by_value(&a.objects).into_iter().filter(|r| right.contains(&r.values)).collect();
    let restriction = a.restriction.and(&b.restriction);
    Ok(merge_operands(&a, &b, objects, restriction))
}

/// − over object values.
pub fn eval_diff(a: EvalResult, b: EvalResult) -> Result<EvalResult> {
    same_structure(&a, &b)?;
    let right: BTreeSet<&BTreeMap<String, Value>> = b.objects.iter().map(|r| &r.values).collect();
    let objects: Vec<Row> =
        dedup_by_value(&a.objects).into_iter().filter(|r| !right.contains(&r.values)).collect();
    let restriction = a.restriction.and(&Restriction::unknown());
    Ok(EvalResult { links: a.links.clone(), ..merge_operands(&a, &a, objects, restriction) })
}

type HierarchyOperand = (Option<String>, Option<String>, EvalResult);

/// Λ: superclass over the shared properties; objects with equal projected values merge.
pub fn eval_generalize(props: &[Path], inputs: Vec<HierarchyOperand>) -> Result<EvalResult> {
    let mut projected = Vec::new();
    let mut subclasses = Vec::new();
    for (alias, class, r) in inputs {
        projected.push(eval_project(props, alias.as_deref(), r)?);
        subclasses.extend(class);
    }
    let Some(first) = projected.first() else {
        return Err(EvalError::StructureMismatch("generalize needs at least one class".into()));
    };
    let mut merged = first.clone();
    merged.objects.clear();
    let mut order: Vec<BTreeMap<String, Value>> = Vec::new();
    let mut keys: BTreeMap<BTreeMap<String, Value>, Vec<Value>> = BTreeMap::new();
    for (k, p) in projected.iter().enumerate() {
        if k > 0 {
            same_structure(first, p)?;
            merged = merge_operands(&merged, p, Vec::new(), merged.restriction.or(&p.restriction));
        }
        for row in &p.objects {
            let entry = keys.entry(row.values.clone()).or_insert_with(|| {
                order.push(row.values.clone());
                Vec::new()
            });
            entry.push(row.key.clone());
        }
    }
    merged.objects = order
        .into_iter()
        .map(|values| {
            let mut ks = keys.remove(&values).unwrap_or_default();
            ks.sort();
            ks.dedup();
            let key = if ks.len() == 1 { ks.remove(0) } else { Value::List(ks) };
            Row { key, values, identity: None }
        })
        .collect();
    merged.identity_class = None;
    merged.hierarchy = Some(HierarchyEdge::Generalize { subclasses });
    Ok(merged)
}

/// Σ: subclass over the union of operand structures, restricted by the predicate.
pub fn eval_specialize(pred: &Dnf, inputs: Vec<HierarchyOperand>) -> Result<EvalResult> {
    if inputs.is_empty() {
        return Err(EvalError::StructureMismatch("specialize needs at least one class".into()));
    }
    let mut structure: Vec<Field> = Vec::new();
    for (_, _, r) in &inputs {
        for f in &r.structure {
            match structure.iter_mut().find(|g| g.name == f.name) {
                Some(g) if g.ty != f.ty => {
                    return Err(EvalError::StructureMismatch(format!("property `{}`", f.name)))
                }
                Some(g) => {
                    for o in &f.origins {
                        if !g.origins.contains(o) {
                            g.origins.push(o.clone());
                        }
                    }
                }
                None => structure.push(f.clone()),
            }
        }
    }
    let scope = Scope {
        operands: inputs.iter().map(|(a, _, r)| (a.as_deref(), r)).collect(),
    };
    scope.check_pred(pred)?;

    let (_, _, first) = &inputs[0];
    let mut objects = Vec::new();
    for row in &first.objects {
        let mut rows: Vec<&Row> = vec![row];
        for (_, _, other) in &inputs[1..] {
            match other.objects.iter().find(|o| o.key == row.key) {
                Some(o) => rows.push(o),
                None => break,
            }
        }
        if rows.len() != inputs.len() || !scope.eval_pred(pred, &rows)? {
            continue;
        }
        let mut values = BTreeMap::new();
        for r in rows.iter().rev() {
            values.extend(r.values.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        objects.push(Row { key: row.key.clone(), values, identity: None });
    }
    let mut restriction = scope.restriction(pred);
    let mut involved = BTreeSet::new();
    let mut links = Vec::new();
    let mut supers = Vec::new();
    for (_, class, r) in &inputs {
        restriction = restriction.and(&r.restriction);
        involved.extend(r.involved_classes.iter().cloned());
        links.extend(r.links.iter().cloned());
        supers.extend(class.clone());
    }
    Ok(EvalResult {
        structure,
        objects,
        involved_classes: involved,
        identity_class: None,
        links,
        restriction,
        method_calls: Vec::new(),
        hierarchy: Some(HierarchyEdge::Specialize { supers }),
    })
}
