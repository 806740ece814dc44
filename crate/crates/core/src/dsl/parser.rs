use std::collections::BTreeSet;

use super::lexer::{Tok, Token};
use super::DslError;
use crate::algebra::{AugmentBinding, AugmentSource, Bound, MappingExpr};
use crate::predicate::{Atom, CmpOp, Dnf, Path, Term};
use crate::schema::{
    AggFn, ArchiveAtom, ArchiveEntry, ArchiveMode, ArchivePredicate, EnvConfig, Environment, MethodSig,
    MethodUsage, Period, Property, PropertyKind, SourceClass, WarehouseClassDecl, WarehouseSchema,
};
use crate::temporal::{Instant, TemporalUnit};
use crate::value::{Scalar, SemType, Value};

type Result<T> = std::result::Result<T, DslError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RefKind {
    Class,
    WarehouseClass,
    /// `C::p` after `inverse`.
    Inverse,
    /// Method reference inside a usage block of the given class.
    Method,
}

#[derive(Debug, Clone)]
struct NameRef {
    kind: RefKind,
    name: String,
    /// Declaring class for method references.
    scope: String,
    line: usize,
    col: usize,
}

struct Pending {
    line: usize,
    col: usize,
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    refs: Vec<NameRef>,
}

const EXPR_KEYWORDS: [&str; 15] = [
    "project",
    "mask",
    "augment",
    "select",
    "join",
    "nest",
    "unnest",
    "union",
    "intersect",
    "diff",
    "minus",
    "generalize",
    "specialize",
    "true",
    "false",
];

const EXPR_SYMBOLS: [&str; 11] = ["π", "μ", "α", "σ", "⋈", "η", "η⁻¹", "∪", "∩", "−", "Λ"];

impl Parser {
    pub fn new(toks: Vec<Token>) -> Self {
        Parser { toks, pos: 0, refs: Vec::new() }
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> Pending {
        let t = self.peek();
        Pending { line: t.line, col: t.col }
    }

    fn error<T>(&self, message: impl std::fmt::Display) -> Result<T> {
        let t = self.peek();
        let found = match &t.tok {
            Tok::Ident(s) | Tok::Lit(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        };
        Err(DslError::syntax(t.line, t.col, format!("{message}, found {found}")))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(format!("expected `{s}`"))
        }
    }

    fn is_kw(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == w)
    }

    fn eat_kw(&mut self, w: &str) -> bool {
        if self.is_kw(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, w: &str) -> Result<()> {
        if self.eat_kw(w) {
            Ok(())
        } else {
            self.error(format!("expected `{w}`"))
        }
    }

    fn ident(&mut self) -> Result<(String, Pending)> {
        let at = self.here();
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok((s, at))
            }
            _ => self.error("expected a name"),
        }
    }

    fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    fn expect_eof(&self) -> Result<()> {
        if self.at_eof() {
            Ok(())
        } else {
            self.error("expected end of input")
        }
    }

    fn note(&mut self, kind: RefKind, name: &str, scope: &str, at: &Pending) {
        self.refs.push(NameRef { kind, name: name.to_string(), scope: scope.to_string(), line: at.line, col: at.col });
    }

    // ---------------------------------------------------------------------
    // Document

    pub fn document(mut self) -> Result<WarehouseSchema> {
        let mut schema = WarehouseSchema::default();
        let mut names: BTreeSet<String> = BTreeSet::new();
        let mut config_seen = false;
        while !self.at_eof() {
            if self.is_kw("warehouse") && !matches!(self.peek_at(1), Tok::Ident(s) if s == "interface") {
                self.bump();
                let (name, at) = self.ident()?;
                if schema.name.is_some() {
                    return Err(dup(&name, &at));
                }
                self.expect_sym(";")?;
                schema.name = Some(name);
                continue;
            }
            if self.eat_kw("environment") {
                let (name, at) = self.ident()?;
                if schema.environment(&name).is_some() {
                    return Err(dup(&name, &at));
                }
                let env = self.environment(name)?;
                schema.environments.push(env);
                continue;
            }
            if self.is_kw("config") {
                let at = self.here();
                self.bump();
                if config_seen {
                    return Err(dup("config", &at));
                }
                config_seen = true;
                self.expect_sym("{")?;
                schema.config = self.config_body(None)?;
                self.eat_sym(";");
                continue;
            }
            let forced = if self.eat_kw("warehouse") {
                Some(true)
            } else if self.eat_kw("source") {
                Some(false)
            } else {
                None
            };
            if !self.is_kw("interface") {
                return self.error("expected `interface`, `environment`, `config` or `warehouse`");
            }
            let (decl, at) = self.interface()?;
            let name = decl.name.clone();
            if !names.insert(name.clone()) {
                return Err(dup(&name, &at));
            }
            let warehouse = forced.unwrap_or(decl.mapping.is_some() || !decl.tempo_filter.is_empty() || !decl.archive_filter.is_empty());
            if warehouse {
                schema.classes.push(decl);
            } else {
                if decl.mapping.is_some() || !decl.tempo_filter.is_empty() || !decl.archive_filter.is_empty() {
                    return Err(DslError::syntax(at.line, at.col, format!("source interface `{name}` cannot have a mapping or filters")));
                }
                schema.sources.push(SourceClass {
                    name: decl.name,
                    supers: decl.supers,
                    properties: decl.properties,
                    methods: decl.methods,
                });
            }
        }
        self.resolve(&schema)?;
        Ok(schema)
    }

    fn resolve(&self, schema: &WarehouseSchema) -> Result<()> {
        let declared = |n: &str| schema.source(n).is_some() || schema.class(n).is_some();
        for r in &self.refs {
            let ok = match r.kind {
                RefKind::Class => declared(&r.name),
                RefKind::WarehouseClass => schema.class(&r.name).is_some(),
                RefKind::Inverse => declared(&r.name),
                RefKind::Method => match r.name.split_once("::") {
                    Some((c, m)) => {
                        if !declared(c) {
                            return Err(DslError::UnresolvedName { line: r.line, col: r.col, name: c.to_string() });
                        }
                        schema.resolve_method(c, m).is_some()
                    }
                    None => schema.resolve_method(&r.scope, &r.name).is_some(),
                },
            };
            if !ok {
                return Err(DslError::UnresolvedName { line: r.line, col: r.col, name: r.name.clone() });
            }
        }
        Ok(())
    }

    fn interface(&mut self) -> Result<(WarehouseClassDecl, Pending)> {
        self.expect_kw("interface")?;
        let (name, at) = self.ident()?;
        let mut decl = WarehouseClassDecl::new(name.clone());
        if self.eat_sym("(") {
            self.expect_kw("extend")?;
            loop {
                let (s, sat) = self.ident()?;
                self.note(RefKind::Class, &s, &name, &sat);
                if decl.supers.contains(&s) {
                    return Err(dup(&s, &sat));
                }
                decl.supers.push(s);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
        }
        self.expect_sym("{")?;
        let mut usages: Vec<(String, Pending, MethodUsage)> = Vec::new();
        while !self.eat_sym("}") {
            if self.at_eof() {
                return self.error("expected `}`");
            }
            self.member(&name, &mut decl, &mut usages)?;
        }
        for (m, mat, usage) in usages {
            let Some(sig) = decl.methods.iter_mut().find(|s| s.name == m) else {
                return Err(DslError::UnresolvedName { line: mat.line, col: mat.col, name: m });
            };
            if sig.usage.is_some() {
                return Err(dup(&m, &mat));
            }
            sig.usage = Some(usage);
        }
        if self.eat_kw("mapping") {
            decl.mapping = Some(self.expr()?);
        }
        if self.eat_kw("with") {
            loop {
                if self.eat_kw("temporal") {
                    self.expect_kw("filter")?;
                    self.expect_sym("{")?;
                    decl.tempo_filter = self.name_list("}")?;
                } else if self.eat_kw("archive") {
                    self.expect_kw("filter")?;
                    self.expect_sym("{")?;
                    loop {
                        let (f, fat) = self.ident()?;
                        let func: AggFn = f.parse().map_err(|e| DslError::syntax(fat.line, fat.col, e))?;
                        self.expect_sym("(")?;
                        let (p, _) = self.ident()?;
                        self.expect_sym(")")?;
                        decl.archive_filter.push(ArchiveEntry { func, property: p });
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym("}")?;
                } else {
                    return self.error("expected `temporal filter` or `archive filter`");
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.eat_sym(";");
        Ok((decl, at))
    }

    /// Comma-separated names up to `close`.
    fn name_list(&mut self, close: &str) -> Result<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        if self.eat_sym(close) {
            return Ok(out);
        }
        loop {
            let (n, at) = self.ident()?;
            if out.contains(&n) {
                return Err(dup(&n, &at));
            }
            out.push(n);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(close)?;
        Ok(out)
    }

    fn member(
        &mut self,
        class: &str,
        decl: &mut WarehouseClassDecl,
        usages: &mut Vec<(String, Pending, MethodUsage)>,
    ) -> Result<()> {
        if self.eat_kw("attribute") {
            let ty = self.ty(class)?;
            let (n, at) = self.ident()?;
            self.expect_sym(";")?;
            return push_property(decl, Property::attribute(n, ty), &at);
        }
        if self.eat_kw("relationship") {
            let ty = self.ty(class)?;
            let (n, at) = self.ident()?;
            let mut inverse = None;
            if self.eat_kw("inverse") {
                let (c, cat) = self.ident()?;
                self.note(RefKind::Inverse, &c, class, &cat);
                self.expect_sym("::")?;
                let (p, _) = self.ident()?;
                inverse = Some((c, p));
            }
            self.expect_sym(";")?;
            return push_property(decl, Property { name: n, ty, kind: PropertyKind::Relationship { inverse } }, &at);
        }
        if self.is_kw("method") && matches!(self.peek_at(1), Tok::Ident(_)) && matches!(self.peek_at(2), Tok::Sym("(")) {
            self.bump();
            let (m, at) = self.ident()?;
            self.expect_sym("(")?;
            self.expect_sym(")")?;
            let usage = self.usage(class)?;
            self.expect_sym(";")?;
            usages.push((m, at, usage));
            return Ok(());
        }
        let return_type = if self.eat_kw("void") { None } else { Some(self.ty(class)?) };
        let (m, at) = self.ident()?;
        self.expect_sym("(")?;
        self.expect_sym(")")?;
        self.expect_sym(";")?;
        if decl.methods.iter().any(|s| s.name == m) {
            return Err(dup(&m, &at));
        }
        decl.methods.push(MethodSig { name: m, return_type, usage: None });
        Ok(())
    }

    fn usage(&mut self, class: &str) -> Result<MethodUsage> {
        let mut usage = MethodUsage::default();
        if !self.eat_kw("uses") {
            return Ok(usage);
        }
        let mut any = false;
        loop {
            if self.eat_kw("properties") {
                self.expect_sym("{")?;
                if !self.eat_sym("}") {
                    loop {
                        usage.properties.insert(self.path()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym("}")?;
                }
            } else if self.eat_kw("methods") {
                self.expect_sym("{")?;
                if !self.eat_sym("}") {
                    loop {
                        let (a, at) = self.ident()?;
                        let r = if self.eat_sym("::") { format!("{a}::{}", self.ident()?.0) } else { a };
                        self.note(RefKind::Method, &r, class, &at);
                        usage.methods.insert(r);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym("}")?;
                }
            } else if self.eat_kw("objects") {
                self.expect_kw("where")?;
                let d = self.pred()?;
                usage.objects = Some(match usage.objects.take() {
                    Some(prev) => prev.and(d),
                    None => d,
                });
            } else if any {
                break;
            } else {
                return self.error("expected `properties`, `methods` or `objects`");
            }
            any = true;
        }
        Ok(usage)
    }

    fn ty(&mut self, class: &str) -> Result<SemType> {
        let (n, at) = self.ident()?;
        if n == "Unsigned" {
            self.expect_kw("Short")?;
            return Ok(SemType::Scalar(Scalar::UnsignedShort));
        }
        if let Some(s) = Scalar::from_name(&n) {
            return Ok(SemType::Scalar(s));
        }
        match n.as_str() {
            "Struct" => {
                let name = if matches!(self.peek().tok, Tok::Ident(_)) { Some(self.ident()?.0) } else { None };
                self.expect_sym("{")?;
                let mut fields: Vec<(String, SemType)> = Vec::new();
                if !self.eat_sym("}") {
                    loop {
                        let t = self.ty(class)?;
                        let (f, fat) = self.ident()?;
                        if fields.iter().any(|(g, _)| *g == f) {
                            return Err(dup(&f, &fat));
                        }
                        fields.push((f, t));
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym("}")?;
                }
                Ok(SemType::Struct { name, fields })
            }
            "Set" | "List" => {
                self.expect_sym("<")?;
                let inner = Box::new(self.ty(class)?);
                self.expect_sym(">")?;
                Ok(if n == "Set" { SemType::Set(inner) } else { SemType::List(inner) })
            }
            "Any" => Ok(SemType::Any),
            _ => {
                self.note(RefKind::Class, &n, class, &at);
                Ok(SemType::Ref(n))
            }
        }
    }

    fn environment(&mut self, name: String) -> Result<Environment> {
        self.expect_sym("{")?;
        let mut classes = Vec::new();
        let mut seen_classes = false;
        let config = self.config_body(Some((&mut classes, &mut seen_classes)))?;
        self.eat_sym(";");
        Ok(Environment { name, classes, config })
    }

    /// Statements of an `environment` or `config` block, up to the closing brace.
    fn config_body(&mut self, mut classes: Option<(&mut Vec<String>, &mut bool)>) -> Result<EnvConfig> {
        let mut cfg = EnvConfig::default();
        while !self.eat_sym("}") {
            let at = self.here();
            if let Some((list, seen)) = classes.as_mut() {
                if self.eat_kw("classes") {
                    if **seen {
                        return Err(dup("classes", &at));
                    }
                    **seen = true;
                    self.expect_sym("{")?;
                    let start = self.pos;
                    let names = self.name_list("}")?;
                    let positions: Vec<Pending> = self.toks[start..self.pos]
                        .iter()
                        .filter(|t| matches!(t.tok, Tok::Ident(_)))
                        .map(|t| Pending { line: t.line, col: t.col })
                        .collect();
                    for (n, p) in names.iter().zip(&positions) {
                        self.note(RefKind::WarehouseClass, n, "", p);
                    }
                    **list = names;
                    self.expect_sym(";")?;
                    continue;
                }
            }
            if self.eat_kw("refresh") {
                if cfg.refresh.is_some() {
                    return Err(dup("refresh", &at));
                }
                self.expect_kw("every")?;
                let count = match &self.peek().tok {
                    Tok::Lit(s) => s.parse::<u32>().ok().filter(|c| *c > 0),
                    _ => None,
                };
                let Some(count) = count else { return self.error("expected a positive period count") };
                self.bump();
                let unit = self.unit()?;
                cfg.refresh = Some(Period { count, unit });
            } else if self.eat_kw("archive") {
                if self.eat_kw("when") {
                    if cfg.archive_when.is_some() {
                        return Err(dup("archive when", &at));
                    }
                    let mut atoms = vec![self.archive_atom()?];
                    while self.eat_kw("and") {
                        atoms.push(self.archive_atom()?);
                    }
                    cfg.archive_when = Some(ArchivePredicate(atoms));
                } else if self.eat_kw("mode") {
                    if cfg.archive_mode.is_some() {
                        return Err(dup("archive mode", &at));
                    }
                    cfg.archive_mode = Some(if self.eat_kw("classical") {
                        ArchiveMode::Classical
                    } else if self.eat_kw("temporal") {
                        self.expect_sym("(")?;
                        let u = self.unit()?;
                        self.expect_sym(")")?;
                        ArchiveMode::Temporal(u)
                    } else {
                        return self.error("expected `classical` or `temporal`");
                    });
                } else {
                    return self.error("expected `when` or `mode`");
                }
            } else if self.at_eof() {
                return self.error("expected `}`");
            } else {
                return self.error("expected an environment statement");
            }
            self.expect_sym(";")?;
        }
        Ok(cfg)
    }

    fn unit(&mut self) -> Result<TemporalUnit> {
        let at = self.here();
        let (u, _) = self.ident()?;
        u.parse::<TemporalUnit>().map_err(|e| DslError::syntax(at.line, at.col, e))
    }

    fn archive_atom(&mut self) -> Result<ArchiveAtom> {
        if self.eat_kw("not") {
            self.expect_kw("within")?;
            return Ok(ArchiveAtom::NotWithin(self.instant()?));
        }
        if self.eat_kw("within") {
            return Ok(ArchiveAtom::Within(self.instant()?));
        }
        if self.eat_kw("before") {
            return Ok(ArchiveAtom::Before(self.instant()?));
        }
        self.error("expected `within`, `not within` or `before`")
    }

    fn instant(&mut self) -> Result<Instant> {
        let at = self.here();
        let (u, _) = self.ident()?;
        self.expect_sym(":")?;
        let text = match &self.peek().tok {
            Tok::Lit(s) => s.clone(),
            _ => return self.error("expected an instant"),
        };
        self.bump();
        format!("{u}:{text}").parse::<Instant>().map_err(|e| DslError::syntax(at.line, at.col, e))
    }

    // ---------------------------------------------------------------------
    // Mapping expressions

    pub fn standalone_expr(mut self) -> Result<MappingExpr> {
        let e = self.expr()?;
        self.expect_eof()?;
        Ok(e)
    }

    pub fn standalone_pred(mut self) -> Result<Dnf> {
        let d = self.pred()?;
        self.expect_eof()?;
        Ok(d)
    }

    /// Operator keyword at the cursor, if it starts an expression.
    fn operator(&self) -> Option<&'static str> {
        let next = self.peek_at(1);
        match &self.peek().tok {
            Tok::Sym(s) if EXPR_SYMBOLS.contains(s) => Some(match *s {
                "π" => "project",
                "μ" => "mask",
                "α" => "augment",
                "σ" => "select",
                "⋈" => "join",
                "η" => "nest",
                "η⁻¹" => "unnest",
                "∪" => "union",
                "∩" => "intersect",
                "−" => "diff",
                _ => "generalize",
            }),
            Tok::Sym("Σ") => Some("specialize"),
            Tok::Ident(w) => {
                let kw = EXPR_KEYWORDS[..13].iter().find(|k| **k == w)?;
                let opens = matches!(next, Tok::Sym("[")) || matches!(next, Tok::Sym("(")) && matches!(*kw, "union" | "intersect" | "diff" | "minus");
                opens.then_some(if *kw == "minus" { "diff" } else { kw })
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<MappingExpr> {
        let Some(op) = self.operator() else {
            let (c, at) = self.ident()?;
            self.note(RefKind::Class, &c, "", &at);
            return Ok(MappingExpr::ClassRef(c));
        };
        self.bump();
        Ok(match op {
            "project" => {
                let props = self.path_list()?;
                MappingExpr::Project { props, input: Box::new(self.operand()?) }
            }
            "mask" => {
                let props = self.path_list()?;
                MappingExpr::Mask { props, input: Box::new(self.operand()?) }
            }
            "unnest" => {
                let props = self.path_list()?;
                MappingExpr::Unnest { props, input: Box::new(self.operand()?) }
            }
            "augment" => {
                self.expect_sym("[")?;
                let mut bindings: Vec<AugmentBinding> = Vec::new();
                loop {
                    let b = self.binding()?;
                    bindings.push(b);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym("]")?;
                MappingExpr::Augment { bindings, input: Box::new(self.operand()?) }
            }
            "select" => {
                let pred = self.bracket_pred()?;
                MappingExpr::Select { pred, input: Box::new(self.operand()?) }
            }
            "join" => {
                let pred = self.bracket_pred()?;
                let mut ops = self.operands(2, 2)?;
                let right = ops.pop().expect("two operands");
                let left = ops.pop().expect("two operands");
                MappingExpr::Join { pred, left: Box::new(left), right: Box::new(right) }
            }
            "nest" => {
                let group = self.path_list()?;
                self.expect_sym("::")?;
                let (attr, _) = self.ident()?;
                MappingExpr::Nest { group, attr, input: Box::new(self.operand()?) }
            }
            "union" | "intersect" | "diff" => {
                let mut ops = self.operands(2, 2)?;
                let b = Box::new(ops.pop().expect("two operands"));
                let a = Box::new(ops.pop().expect("two operands"));
                match op {
                    "union" => MappingExpr::Union(a, b),
                    "intersect" => MappingExpr::Intersect(a, b),
                    _ => MappingExpr::Diff(a, b),
                }
            }
            "generalize" => {
                let props = self.path_list()?;
                MappingExpr::Generalize { props, inputs: self.operands(1, usize::MAX)? }
            }
            _ => {
                let pred = self.bracket_pred()?;
                MappingExpr::Specialize { pred, inputs: self.operands(1, usize::MAX)? }
            }
        })
    }

    fn binding(&mut self) -> Result<AugmentBinding> {
        let (name, _) = self.ident()?;
        self.expect_sym(":")?;
        let at = self.here();
        let (first, _) = self.ident()?;
        if self.eat_sym("::") {
            let (m, _) = self.ident()?;
            self.expect_sym("(")?;
            self.expect_sym(")")?;
            self.note(RefKind::Method, &format!("{first}::{m}"), "", &at);
            return Ok(AugmentBinding { name, source: AugmentSource::Method { class: Some(first), method: m } });
        }
        if self.is_sym("(") {
            if let Ok(func) = first.parse::<AggFn>() {
                self.bump();
                if self.eat_sym(")") {
                    return Err(DslError::syntax(at.line, at.col, format!("`{first}` needs a path argument")));
                }
                let path = self.path()?;
                self.expect_sym(")")?;
                return Ok(AugmentBinding { name, source: AugmentSource::Agg { func, path } });
            }
            self.bump();
            self.expect_sym(")")?;
            return Ok(AugmentBinding { name, source: AugmentSource::Method { class: None, method: first } });
        }
        self.pos -= 1;
        let ty = self.ty("")?;
        Ok(AugmentBinding { name, source: AugmentSource::Specific(ty) })
    }

    fn operand(&mut self) -> Result<Bound> {
        self.expect_sym("(")?;
        let b = self.bound()?;
        self.expect_sym(")")?;
        Ok(b)
    }

    fn operands(&mut self, min: usize, max: usize) -> Result<Vec<Bound>> {
        self.expect_sym("(")?;
        let mut out = vec![self.bound()?];
        while self.eat_sym(",") {
            out.push(self.bound()?);
        }
        if out.len() < min || out.len() > max {
            let n = if min == max { format!("exactly {min}") } else { format!("at least {min}") };
            return self.error(format!("expected {n} operands"));
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn bound(&mut self) -> Result<Bound> {
        let aliased = self.operator().is_none()
            && matches!(self.peek().tok, Tok::Ident(_))
            && matches!(self.peek_at(1), Tok::Ident(_) | Tok::Sym(_))
            && !matches!(self.peek_at(1), Tok::Sym(")") | Tok::Sym(","));
        let alias = if aliased { Some(self.ident()?.0) } else { None };
        let expr = self.expr()?;
        Ok(Bound { alias, expr })
    }

    fn path(&mut self) -> Result<Path> {
        let mut segs = vec![self.ident()?.0];
        while self.eat_sym(".") {
            segs.push(self.ident()?.0);
        }
        Ok(Path(segs))
    }

    fn path_list(&mut self) -> Result<Vec<Path>> {
        self.expect_sym("[")?;
        let mut out = Vec::new();
        if self.eat_sym("]") {
            return Ok(out);
        }
        loop {
            out.push(self.path()?);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym("]")?;
        Ok(out)
    }

    // ---------------------------------------------------------------------
    // Predicates

    fn bracket_pred(&mut self) -> Result<Dnf> {
        self.expect_sym("[")?;
        let d = self.pred()?;
        self.expect_sym("]")?;
        Ok(d)
    }

    fn pred(&mut self) -> Result<Dnf> {
        let mut d = self.conj()?;
        while self.eat_kw("or") {
            d = d.or(self.conj()?);
        }
        Ok(d)
    }

    fn conj(&mut self) -> Result<Dnf> {
        let mut d = self.pred_atom()?;
        while self.eat_kw("and") {
            d = d.and(self.pred_atom()?);
        }
        Ok(d)
    }

    fn pred_atom(&mut self) -> Result<Dnf> {
        if self.eat_sym("(") {
            let d = self.pred()?;
            self.expect_sym(")")?;
            return Ok(d);
        }
        if (self.is_kw("true") || self.is_kw("false")) && !self.at_cmp_op(1) {
            let b = self.is_kw("true");
            self.bump();
            return Ok(Dnf::atom(Atom::Const(b)));
        }
        let left = self.term()?;
        if self.eat_kw("in") || self.eat_sym("∈") {
            let coll = self.path()?;
            return Ok(Dnf::atom(Atom::Member { elem: left, coll }));
        }
        let op = match &self.peek().tok {
            Tok::Sym(s) => cmp_op(s),
            _ => None,
        };
        let Some(op) = op else { return self.error("expected a comparison operator or `in`") };
        self.bump();
        let right = self.term()?;
        Ok(Dnf::atom(Atom::Cmp { left, op, right }))
    }

    fn at_cmp_op(&self, k: usize) -> bool {
        match self.peek_at(k) {
            Tok::Sym(s) => cmp_op(s).is_some() || *s == "∈",
            Tok::Ident(w) => w == "in",
            _ => false,
        }
    }

    fn term(&mut self) -> Result<Term> {
        let at = self.here();
        match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Term::Lit(Value::Text(s)))
            }
            Tok::Lit(s) => {
                self.bump();
                if let Ok(i) = s.parse::<i64>() {
                    return Ok(Term::Lit(Value::Int(i)));
                }
                match s.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(Term::Lit(Value::Float(x))),
                    _ => Err(DslError::syntax(at.line, at.col, format!("bad number `{s}`"))),
                }
            }
            Tok::Ident(w) if matches!(w.as_str(), "true" | "false" | "null") && !matches!(self.peek_at(1), Tok::Sym(".")) => {
                self.bump();
                Ok(Term::Lit(match w.as_str() {
                    "true" => Value::Bool(true),
                    "false" => Value::Bool(false),
                    _ => Value::Null,
                }))
            }
            Tok::Ident(_) => Ok(Term::Path(self.path()?)),
            _ => self.error("expected a path or a literal"),
        }
    }
}

fn cmp_op(s: &str) -> Option<CmpOp> {
    Some(match s {
        "=" => CmpOp::Eq,
        "!=" | "<>" | "≠" => CmpOp::Ne,
        "<" => CmpOp::Lt,
        "<=" | "≤" => CmpOp::Le,
        ">" => CmpOp::Gt,
        ">=" | "≥" => CmpOp::Ge,
        _ => return None,
    })
}

fn dup(name: &str, at: &Pending) -> DslError {
    DslError::DuplicateDeclaration { line: at.line, col: at.col, name: name.to_string() }
}

fn push_property(decl: &mut WarehouseClassDecl, p: Property, at: &Pending) -> Result<()> {
    if decl.properties.iter().any(|q| q.name == p.name) {
        return Err(dup(&p.name, at));
    }
    decl.properties.push(p);
    Ok(())
}
