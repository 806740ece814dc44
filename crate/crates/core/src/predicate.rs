//! Selection/join predicates in disjunctive normal form.

use std::cmp::Ordering;
use std::fmt;

use crate::value::Value;

/// Dotted property path, optionally starting with an operand alias.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path(pub Vec<String>);

impl Path {
    pub fn parse(s: &str) -> Path {
        Path(s.split('.').map(str::to_string).collect())
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn leaf(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or("")
    }

    pub fn head(&self) -> &str {
        self.0.first().map(String::as_str).unwrap_or("")
    }

    /// Drop a leading alias segment when it matches and something remains.
    pub fn strip_alias(&self, alias: Option<&str>) -> &[String] {
        match alias {
            Some(a) if self.0.len() > 1 && self.0[0] == a => &self.0[1..],
            _ => &self.0,
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    /// `a op b` rewritten as `b op' a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Path(Path),
    Lit(Value),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Path(p) => write!(f, "{p}"),
            Term::Lit(v) => write_literal(f, v),
        }
    }
}

pub fn write_literal(f: &mut impl fmt::Write, v: &Value) -> fmt::Result {
    match v {
        Value::Text(s) => write!(f, "{}", serde_json::Value::String(s.clone())),
        Value::Float(x) => write!(f, "{x:?}"),
        other => write!(f, "{other}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Cmp { left: Term, op: CmpOp, right: Term },
    /// `elem in coll`
    Member { elem: Term, coll: Path },
    Const(bool),
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Cmp { left, op, right } => write!(f, "{left} {} {right}", op.symbol()),
            Atom::Member { elem, coll } => write!(f, "{elem} in {coll}"),
            Atom::Const(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Conjunction(pub Vec<Atom>);

impl fmt::Display for Conjunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("true");
        }
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Disjunction of conjunctions. No disjunct means `false`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dnf(pub Vec<Conjunction>);

impl Dnf {
    pub fn always() -> Dnf {
        Dnf(vec![Conjunction(vec![])])
    }

    pub fn never() -> Dnf {
        Dnf(vec![])
    }

    pub fn atom(a: Atom) -> Dnf {
        Dnf(vec![Conjunction(vec![a])])
    }

    pub fn or(mut self, other: Dnf) -> Dnf {
        self.0.extend(other.0);
        self
    }

    pub fn and(self, other: Dnf) -> Dnf {
        let mut out = Vec::new();
        for a in &self.0 {
            for b in &other.0 {
                let mut atoms = a.0.clone();
                atoms.extend(b.0.iter().cloned());
                out.push(Conjunction(atoms));
            }
        }
        Dnf(out)
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.0.iter().flat_map(|c| c.0.iter())
    }

    /// Evaluate against a path resolver. Comparisons involving Null are false.
    pub fn eval<F>(&self, resolve: &F) -> Result<bool, PredicateError>
    where
        F: Fn(&Path) -> Result<Value, PredicateError>,
    {
        for conj in &self.0 {
            let mut ok = true;
            for atom in &conj.0 {
                if !eval_atom(atom, resolve)? {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

impl fmt::Display for Dnf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("false");
        }
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" or ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PredicateError {
    #[error("unknown path `{0}`")]
    UnknownPath(String),
    #[error("type mismatch: cannot compare {0} with {1}")]
    TypeMismatch(String, String),
    #[error("`{0}` is not a collection")]
    NotACollection(String),
}

fn term_value<F>(t: &Term, resolve: &F) -> Result<Value, PredicateError>
where
    F: Fn(&Path) -> Result<Value, PredicateError>,
{
    match t {
        Term::Path(p) => resolve(p),
        Term::Lit(v) => Ok(v.clone()),
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Struct(_) | Value::Set(_) | Value::List(_))
}

fn eval_atom<F>(atom: &Atom, resolve: &F) -> Result<bool, PredicateError>
where
    F: Fn(&Path) -> Result<Value, PredicateError>,
{
    match atom {
        Atom::Const(b) => Ok(*b),
        Atom::Cmp { left, op, right } => {
            let l = term_value(left, resolve)?;
            let r = term_value(right, resolve)?;
            if l.is_null() || r.is_null() {
                return Ok(false);
            }
            if matches!(op, CmpOp::Eq | CmpOp::Ne) && !(is_scalar(&l) && is_scalar(&r)) {
                return Ok(op.holds(l.cmp(&r)));
            }
            match l.compare(&r) {
                Some(ord) => Ok(op.holds(ord)),
                None => Err(PredicateError::TypeMismatch(l.to_string(), r.to_string())),
            }
        }
        Atom::Member { elem, coll } => {
            let e = term_value(elem, resolve)?;
            let c = resolve(coll)?;
            if e.is_null() || c.is_null() {
                return Ok(false);
            }
            match &c {
                Value::Set(m) | Value::List(m) => Ok(m.contains(&e)),
                Value::Ref(_) => Ok(c == e),
                _ => Err(PredicateError::NotACollection(coll.to_string())),
            }
        }
    }
}

/// Is the conjunction of `constraints` (all over one path) unsatisfiable?
/// Treats the value order as dense; unknown comparisons count as satisfiable.
fn unsatisfiable(constraints: &[(CmpOp, &Value)]) -> bool {
    let cmp = |a: &Value, b: &Value| a.compare(b);
    // An equality pins the value: check every other constraint against it.
    if let Some((_, pinned)) = constraints.iter().find(|(op, _)| *op == CmpOp::Eq) {
        return constraints.iter().any(|(op, v)| match cmp(pinned, v) {
            Some(ord) => !op.holds(ord),
            None => false,
        });
    }
    let mut lower: Option<(&Value, bool)> = None; // (bound, strict)
    let mut upper: Option<(&Value, bool)> = None;
    for (op, v) in constraints {
        match op {
            CmpOp::Gt | CmpOp::Ge => {
                let strict = *op == CmpOp::Gt;
                lower = match lower {
                    None => Some((v, strict)),
                    Some((b, s)) => match cmp(v, b) {
                        Some(Ordering::Greater) => Some((v, strict)),
                        Some(Ordering::Equal) => Some((b, s || strict)),
                        Some(Ordering::Less) => Some((b, s)),
                        None => return false,
                    },
                };
            }
            CmpOp::Lt | CmpOp::Le => {
                let strict = *op == CmpOp::Lt;
                upper = match upper {
                    None => Some((v, strict)),
                    Some((b, s)) => match cmp(v, b) {
                        Some(Ordering::Less) => Some((v, strict)),
                        Some(Ordering::Equal) => Some((b, s || strict)),
                        Some(Ordering::Greater) => Some((b, s)),
                        None => return false,
                    },
                };
            }
            _ => {}
        }
    }
    let (Some((lo, ls)), Some((hi, hs))) = (lower, upper) else {
        return false;
    };
    match cmp(lo, hi) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => {
            ls || hs
                || constraints
                    .iter()
                    .any(|(op, v)| *op == CmpOp::Ne && cmp(v, lo) == Some(Ordering::Equal))
        }
        _ => false,
    }
}

/// Does every value satisfying all `premises` also satisfy `goal`?
/// All constraints are over the same path; the check is conservative.
pub fn implies(premises: &[(CmpOp, Value)], goal: &(CmpOp, Value)) -> bool {
    let mut all: Vec<(CmpOp, &Value)> = premises.iter().map(|(o, v)| (*o, v)).collect();
    all.push((goal.0.negate(), &goal.1));
    unsatisfiable(&all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Value {
        Value::text(s)
    }

    #[test]
    fn implication_on_equalities() {
        let region = (CmpOp::Eq, t("Midi-Pyrenees"));
        assert!(implies(&[(CmpOp::Eq, t("Midi-Pyrenees"))], &region));
        assert!(!implies(&[(CmpOp::Eq, t("Aquitaine"))], &region));
        assert!(!implies(&[], &region));
    }

    #[test]
    fn implication_on_ranges() {
        let goal = (CmpOp::Gt, Value::Int(1960));
        assert!(implies(&[(CmpOp::Ge, Value::Int(1970))], &goal));
        assert!(implies(&[(CmpOp::Gt, Value::Int(1960))], &goal));
        assert!(!implies(&[(CmpOp::Ge, Value::Int(1960))], &goal));
        assert!(implies(
            &[(CmpOp::Ge, Value::Int(1960)), (CmpOp::Ne, Value::Int(1960))],
            &goal
        ));
        assert!(implies(
            &[(CmpOp::Gt, Value::Int(1980)), (CmpOp::Lt, Value::Int(1990))],
            &(CmpOp::Ne, Value::Int(1975))
        ));
        assert!(!implies(&[(CmpOp::Eq, Value::Int(3))], &(CmpOp::Eq, t("3"))));
    }

    #[test]
    fn eval_null_comparisons_are_false() {
        let p = Dnf::atom(Atom::Cmp {
            left: Term::Path(Path::parse("x")),
            op: CmpOp::Ne,
            right: Term::Lit(Value::Int(1)),
        });
        assert!(!p.eval(&|_| Ok(Value::Null)).unwrap());
        assert!(p.eval(&|_| Ok(Value::Int(2))).unwrap());
        assert!(matches!(
            p.eval(&|_| Ok(Value::text("a"))),
            Err(PredicateError::TypeMismatch(_, _))
        ));
    }

    #[test]
    fn membership() {
        let p = Dnf::atom(Atom::Member {
            elem: Term::Path(Path::parse("v")),
            coll: Path::parse("p.consultations"),
        });
        let resolve = |path: &Path| {
            Ok(if path.head() == "v" {
                Value::Ref("v1".into())
            } else {
                Value::List(vec![Value::Ref("v0".into()), Value::Ref("v1".into())])
            })
        };
        assert!(p.eval(&resolve).unwrap());
    }

    #[test]
    fn dnf_display() {
        let a = Dnf::atom(Atom::Const(true)).and(Dnf::atom(Atom::Cmp {
            left: Term::Path(Path::parse("o.annee_n")),
            op: CmpOp::Gt,
            right: Term::Lit(Value::Int(1960)),
        }));
        assert_eq!(a.to_string(), "true and o.annee_n > 1960");
        assert_eq!(Dnf::never().to_string(), "false");
    }
}
