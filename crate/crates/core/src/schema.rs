//! Declarations: source classes, warehouse classes, environments and the
//! warehouse schema as written in a `.wdl` document.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::algebra::MappingExpr;
use crate::predicate::{Dnf, Path};
use crate::temporal::{Instant, TemporalUnit};
use crate::value::SemType;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    Attribute,
    /// Relationship with optional inverse `(class, property)`.
    Relationship { inverse: Option<(String, String)> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub ty: SemType,
    pub kind: PropertyKind,
}

impl Property {
    pub fn attribute(name: impl Into<String>, ty: SemType) -> Self {
        Property { name: name.into(), ty, kind: PropertyKind::Attribute }
    }

    pub fn is_relationship(&self) -> bool {
        matches!(self.kind, PropertyKind::Relationship { .. })
    }
}

/// Usage facts of a method body: what it reads.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MethodUsage {
    /// Property paths relative to the declaring class.
    pub properties: BTreeSet<Path>,
    /// Qualified method ids (`CLASS::name`).
    pub methods: BTreeSet<String>,
    /// Object groups the method works on, as a DNF over class paths.
    pub objects: Option<Dnf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSig {
    pub name: String,
    /// `None` for `void` methods.
    pub return_type: Option<SemType>,
    pub usage: Option<MethodUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceClass {
    pub name: String,
    pub supers: Vec<String>,
    pub properties: Vec<Property>,
    pub methods: Vec<MethodSig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggFn {
    Avg,
    Sum,
    Count,
    Max,
    Min,
}

impl AggFn {
    pub const ALL: [AggFn; 5] = [AggFn::Avg, AggFn::Sum, AggFn::Count, AggFn::Max, AggFn::Min];

    pub fn name(self) -> &'static str {
        match self {
            AggFn::Avg => "avg",
            AggFn::Sum => "sum",
            AggFn::Count => "count",
            AggFn::Max => "max",
            AggFn::Min => "min",
        }
    }
}

impl FromStr for AggFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AggFn::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown aggregation function `{s}`"))
    }
}

impl fmt::Display for AggFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveEntry {
    pub func: AggFn,
    pub property: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarehouseClassDecl {
    pub name: String,
    /// Superclasses declared with `extend`.
    pub supers: Vec<String>,
    /// Structure written out in the declaration body, if any.
    pub properties: Vec<Property>,
    pub methods: Vec<MethodSig>,
    pub mapping: Option<MappingExpr>,
    pub tempo_filter: Vec<String>,
    pub archive_filter: Vec<ArchiveEntry>,
}

impl WarehouseClassDecl {
    pub fn new(name: impl Into<String>) -> Self {
        WarehouseClassDecl {
            name: name.into(),
            supers: Vec::new(),
            properties: Vec::new(),
            methods: Vec::new(),
            mapping: None,
            tempo_filter: Vec::new(),
            archive_filter: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Period {
    pub count: u32,
    pub unit: TemporalUnit,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.count, self.unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveAtom {
    Within(Instant),
    NotWithin(Instant),
    Before(Instant),
}

impl fmt::Display for ArchiveAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchiveAtom::Within(i) => write!(f, "within {i}"),
            ArchiveAtom::NotWithin(i) => write!(f, "not within {i}"),
            ArchiveAtom::Before(i) => write!(f, "before {i}"),
        }
    }
}

/// Conjunction of archive atoms, evaluated on every grain of a state domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchivePredicate(pub Vec<ArchiveAtom>);

impl fmt::Display for ArchivePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArchiveMode {
    #[default]
    Classical,
    Temporal(TemporalUnit),
}

impl fmt::Display for ArchiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchiveMode::Classical => f.write_str("classical"),
            ArchiveMode::Temporal(u) => write!(f, "temporal({u})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EnvConfig {
    pub refresh: Option<Period>,
    pub archive_when: Option<ArchivePredicate>,
    pub archive_mode: Option<ArchiveMode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Environment {
    pub name: String,
    pub classes: Vec<String>,
    pub config: EnvConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WarehouseSchema {
    pub name: Option<String>,
    pub sources: Vec<SourceClass>,
    pub classes: Vec<WarehouseClassDecl>,
    pub environments: Vec<Environment>,
    /// Defaults for classes outside every environment.
    pub config: EnvConfig,
}

impl WarehouseSchema {
    pub fn source(&self, name: &str) -> Option<&SourceClass> {
        self.sources.iter().find(|c| c.name == name)
    }

    pub fn class(&self, name: &str) -> Option<&WarehouseClassDecl> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn environment(&self, name: &str) -> Option<&Environment> {
        self.environments.iter().find(|e| e.name == name)
    }

    pub fn environment_of(&self, class: &str) -> Option<&Environment> {
        self.environments.iter().find(|e| e.classes.iter().any(|c| c == class))
    }

    /// Configuration applying to a class: its environment's, falling back to globals.
    pub fn config_for(&self, class: &str) -> EnvConfig {
        let mut cfg = self.environment_of(class).map(|e| e.config.clone()).unwrap_or_default();
        if cfg.refresh.is_none() {
            cfg.refresh = self.config.refresh;
        }
        if cfg.archive_when.is_none() {
            cfg.archive_when = self.config.archive_when.clone();
        }
        if cfg.archive_mode.is_none() {
            cfg.archive_mode = self.config.archive_mode;
        }
        cfg
    }

    /// Transitive superclasses of a source class, nearest first.
    pub fn source_ancestors(&self, name: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut stack = vec![name.to_string()];
        while let Some(c) = stack.pop() {
            if let Some(sc) = self.source(&c) {
                for s in sc.supers.iter().rev() {
                    if !out.contains(s) && s != name {
                        out.push(s.clone());
                        stack.push(s.clone());
                    }
                }
            }
        }
        out
    }

    /// Transitive subclasses of a source class.
    pub fn source_descendants(&self, name: &str) -> Vec<String> {
        self.sources
            .iter()
            .filter(|c| c.name != name && self.source_ancestors(&c.name).iter().any(|a| a == name))
            .map(|c| c.name.clone())
            .collect()
    }

    /// All properties of a source class with their defining class, inherited first.
    pub fn flattened_properties(&self, name: &str) -> Vec<(String, &Property)> {
        let mut out: Vec<(String, &Property)> = Vec::new();
        let mut seen = BTreeSet::new();
        self.collect_properties(name, &mut out, &mut seen, &mut BTreeSet::new());
        out
    }

    fn collect_properties<'a>(
        &'a self,
        name: &str,
        out: &mut Vec<(String, &'a Property)>,
        seen: &mut BTreeSet<String>,
        visiting: &mut BTreeSet<String>,
    ) {
        let Some(class) = self.source(name) else { return };
        if !visiting.insert(name.to_string()) {
            return;
        }
        for s in &class.supers {
            self.collect_properties(s, out, seen, visiting);
        }
        for p in &class.properties {
            if seen.insert(p.name.clone()) {
                out.push((class.name.clone(), p));
            }
        }
    }

    /// Find a method visible on a source class (own or inherited); returns its qualified id.
    pub fn resolve_method(&self, class: &str, method: &str) -> Option<String> {
        std::iter::once(class.to_string())
            .chain(self.source_ancestors(class))
            .find(|c| self.source(c).is_some_and(|sc| sc.methods.iter().any(|m| m.name == method)))
            .map(|c| format!("{c}::{method}"))
    }

    pub fn method(&self, qualified: &str) -> Option<(&SourceClass, &MethodSig)> {
        let (c, m) = qualified.split_once("::")?;
        let class = self.source(c)?;
        class.methods.iter().find(|s| s.name == m).map(|s| (class, s))
    }

    /// Qualify a method reference written inside `class`: `C::m` stays as is,
    /// a bare `m` is looked up on the class and its ancestors.
    pub fn qualify_method(&self, class: &str, reference: &str) -> Option<String> {
        match reference.split_once("::") {
            Some((c, m)) => self.resolve_method(c, m),
            None => self.resolve_method(class, reference),
        }
    }

    /// Every source method as `(qualified id, signature)`, in declaration order.
    pub fn all_methods(&self) -> Vec<(String, &MethodSig)> {
        self.sources
            .iter()
            .flat_map(|c| c.methods.iter().map(move |m| (format!("{}::{}", c.name, m.name), m)))
            .collect()
    }
}
