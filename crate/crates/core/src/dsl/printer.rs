use std::fmt::Write;

use crate::algebra::{AugmentSource, Bound, MappingExpr};
use crate::predicate::Path;
use crate::schema::{EnvConfig, MethodSig, Property, PropertyKind, WarehouseSchema};

/// Canonical text of a schema. Parsing the output yields an equal schema.
pub fn print_schema(schema: &WarehouseSchema) -> String {
    let mut out = String::new();
    if let Some(n) = &schema.name {
        let _ = writeln!(out, "warehouse {n};\n");
    }
    for c in &schema.sources {
        out.push_str("interface ");
        header(&mut out, &c.name, &c.supers);
        body(&mut out, &c.properties, &c.methods);
        out.push('\n');
    }
    for c in &schema.classes {
        let bare = c.mapping.is_none() && c.tempo_filter.is_empty() && c.archive_filter.is_empty();
        out.push_str(if bare { "warehouse interface " } else { "interface " });
        header(&mut out, &c.name, &c.supers);
        body(&mut out, &c.properties, &c.methods);
        if let Some(m) = &c.mapping {
            let _ = write!(out, "\nmapping {}", print_expr(m));
        }
        let mut clauses = Vec::new();
        if !c.tempo_filter.is_empty() {
            clauses.push(format!("temporal filter {{{}}}", c.tempo_filter.join(", ")));
        }
        if !c.archive_filter.is_empty() {
            let entries: Vec<String> = c.archive_filter.iter().map(|e| format!("{}({})", e.func, e.property)).collect();
            clauses.push(format!("archive filter {{{}}}", entries.join(", ")));
        }
        if !clauses.is_empty() {
            let _ = write!(out, "\nwith {}", clauses.join(",\n"));
        }
        out.push_str(";\n\n");
    }
    for e in &schema.environments {
        let _ = writeln!(out, "environment {} {{", e.name);
        let _ = writeln!(out, "    classes {{{}}};", e.classes.join(", "));
        config(&mut out, &e.config);
        out.push_str("}\n\n");
    }
    if schema.config != EnvConfig::default() {
        out.push_str("config {\n");
        config(&mut out, &schema.config);
        out.push_str("}\n\n");
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

fn header(out: &mut String, name: &str, supers: &[String]) {
    out.push_str(name);
    if !supers.is_empty() {
        let _ = write!(out, " (extend {})", supers.join(", "));
    }
    out.push_str(" {\n");
}

fn body(out: &mut String, properties: &[Property], methods: &[MethodSig]) {
    for p in properties {
        match &p.kind {
            PropertyKind::Attribute => {
                let _ = writeln!(out, "    attribute {} {};", p.ty, p.name);
            }
            PropertyKind::Relationship { inverse } => {
                let _ = write!(out, "    relationship {} {}", p.ty, p.name);
                if let Some((c, q)) = inverse {
                    let _ = write!(out, " inverse {c}::{q}");
                }
                out.push_str(";\n");
            }
        }
    }
    for m in methods {
        match &m.return_type {
            Some(t) => {
                let _ = writeln!(out, "    {t} {}();", m.name);
            }
            None => {
                let _ = writeln!(out, "    void {}();", m.name);
            }
        }
    }
    for m in methods {
        let Some(u) = &m.usage else { continue };
        let _ = write!(out, "    method {}()", m.name);
        let mut clauses = Vec::new();
        if !u.properties.is_empty() {
            clauses.push(format!("properties {{{}}}", join_paths(u.properties.iter())));
        }
        if !u.methods.is_empty() {
            let ms: Vec<&str> = u.methods.iter().map(String::as_str).collect();
            clauses.push(format!("methods {{{}}}", ms.join(", ")));
        }
        if let Some(d) = &u.objects {
            clauses.push(format!("objects where {d}"));
        }
        if !clauses.is_empty() {
            let _ = write!(out, " uses {}", clauses.join(" "));
        }
        out.push_str(";\n");
    }
    out.push('}');
}

fn config(out: &mut String, cfg: &EnvConfig) {
    if let Some(p) = &cfg.refresh {
        let _ = writeln!(out, "    refresh every {p};");
    }
    if let Some(w) = &cfg.archive_when {
        let _ = writeln!(out, "    archive when {w};");
    }
    if let Some(m) = &cfg.archive_mode {
        let _ = writeln!(out, "    archive mode {m};");
    }
}

fn join_paths<'a>(paths: impl Iterator<Item = &'a Path>) -> String {
    paths.map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Canonical text of a mapping expression.
pub fn print_expr(e: &MappingExpr) -> String {
    let mut out = String::new();
    expr(&mut out, e);
    out
}

fn expr(out: &mut String, e: &MappingExpr) {
    match e {
        MappingExpr::ClassRef(c) => out.push_str(c),
        MappingExpr::Project { props, input } => {
            let _ = write!(out, "project [{}] ", join_paths(props.iter()));
            operands(out, [&**input]);
        }
        MappingExpr::Mask { props, input } => {
            let _ = write!(out, "mask [{}] ", join_paths(props.iter()));
            operands(out, [&**input]);
        }
        MappingExpr::Unnest { props, input } => {
            let _ = write!(out, "unnest [{}] ", join_paths(props.iter()));
            operands(out, [&**input]);
        }
        MappingExpr::Augment { bindings, input } => {
            let bs: Vec<String> = bindings
                .iter()
                .map(|b| match &b.source {
                    AugmentSource::Agg { func, path } => format!("{}: {func}({path})", b.name),
                    AugmentSource::Method { class: Some(c), method } => format!("{}: {c}::{method}()", b.name),
                    AugmentSource::Method { class: None, method } => format!("{}: {method}()", b.name),
                    AugmentSource::Specific(t) => format!("{}: {t}", b.name),
                })
                .collect();
            let _ = write!(out, "augment [{}] ", bs.join(", "));
            operands(out, [&**input]);
        }
        MappingExpr::Select { pred, input } => {
            let _ = write!(out, "select [{pred}] ");
            operands(out, [&**input]);
        }
        MappingExpr::Join { pred, left, right } => {
            let _ = write!(out, "join [{pred}] ");
            operands(out, [&**left, &**right]);
        }
        MappingExpr::Nest { group, attr, input } => {
            let _ = write!(out, "nest [{}]::{attr} ", join_paths(group.iter()));
            operands(out, [&**input]);
        }
        MappingExpr::Union(a, b) => {
            out.push_str("union ");
            operands(out, [&**a, &**b]);
        }
        MappingExpr::Intersect(a, b) => {
            out.push_str("intersect ");
            operands(out, [&**a, &**b]);
        }
        MappingExpr::Diff(a, b) => {
            out.push_str("diff ");
            operands(out, [&**a, &**b]);
        }
        MappingExpr::Generalize { props, inputs } => {
            let _ = write!(out, "generalize [{}] ", join_paths(props.iter()));
            operands(out, inputs.iter());
        }
        MappingExpr::Specialize { pred, inputs } => {
            let _ = write!(out, "specialize [{pred}] ");
            operands(out, inputs.iter());
        }
    }
}

fn operands<'a>(out: &mut String, bounds: impl IntoIterator<Item = &'a Bound>) {
    out.push('(');
    for (k, b) in bounds.into_iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        if let Some(a) = &b.alias {
            let _ = write!(out, "{a} ");
        }
        expr(out, &b.expr);
    }
    out.push(')');
}
