//! Fixtures and brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use wdw_core::algebra::{eval, EvalContext, EvalResult, SourceObject, SourceSnapshot};
use wdw_core::analyzer::{analyse_locale, analyse_mum, analyze, optimize, MatrixKind, UsageMatrix, Verdict};
use wdw_core::archive::{archive_object, parse_predicate, Weighting};
use wdw_core::catalog::Catalog;
use wdw_core::dsl::{parse_mapping, parse_schema, print_schema, schema_hash};
use wdw_core::io::{load_snapshot, load_tickscript, parse_store, store_to_json};
use wdw_core::model::{State, WarehouseObject, WarehouseStore};
use wdw_core::refresh::{initial_build, refresh, run_schedule};
use wdw_core::report::{matrix_from_csv, matrix_to_csv};
use wdw_core::schema::{AggFn, ArchiveEntry, ArchiveMode, WarehouseSchema};
use wdw_core::temporal::{normalize_domain, Instant, Interval, TemporalDomain, TemporalUnit};
use wdw_core::value::Value;

pub type Tuple = BTreeMap<String, Value>;
pub type Check = Result<String, String>;

pub const ALGEBRA_CASES: u32 = 256;
pub const TEMPORAL_CASES: u32 = 512;
pub const ANALYZER_CASES: u32 = 128;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn annex_text() -> String {
    std::fs::read_to_string(fixture("annex.wdl")).expect("annex fixture")
}

pub fn annex_schema() -> WarehouseSchema {
    parse_schema(&annex_text()).expect("annex parses")
}

pub fn annex_catalog() -> Catalog {
    Catalog::resolve(&annex_schema()).expect("annex resolves")
}

pub fn annex_snapshot(schema: &WarehouseSchema) -> SourceSnapshot {
    load_snapshot(schema, &fixture("snapshot.json")).expect("snapshot fixture")
}

pub fn instant(s: &str) -> Instant {
    s.parse().unwrap_or_else(|e| panic!("bad instant {s}: {e:?}"))
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn run_prop<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn sorted<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v
}

// ---------------------------------------------------------------------------
// 1, 2: derivability on the annex

pub const DERIVABLE: [&str; 8] = [
    "age",
    "est_urbain",
    "est_interne",
    "est_generaliste",
    "montant_euro",
    "montant_prescrit",
    "affiche_tension",
    "est_obese",
];

pub fn expected_missing() -> BTreeMap<String, BTreeSet<String>> {
    [
        ("est_rural", "PERSONNEadresse.code"),
        ("taux_remb", "type_convention"),
        ("nb_symptomes", "symptomes"),
        ("montant_remb", "taux_secu"),
        ("cout_secu", "montant_remb"),
    ]
    .into_iter()
    .map(|(m, c)| (m.to_string(), BTreeSet::from([c.to_string()])))
    .collect()
}

pub fn check_derivability() -> Check {
    let report = analyze(&annex_catalog(), &BTreeSet::new()).map_err(|e| e.to_string())?;
    let expected: BTreeSet<String> = DERIVABLE.iter().map(|s| s.to_string()).collect();
    let got = report.derivable();
    if got != expected {
        return Err(format!("derivable {got:?}, expected {expected:?}"));
    }
    let missing = report.non_derivable();
    if missing != expected_missing() {
        return Err(format!("non-derivable {missing:?}, expected {:?}", expected_missing()));
    }
    Ok(format!("{} derivable, {} non-derivable", got.len(), missing.len()))
}

pub fn check_derived_row() -> Check {
    let catalog = annex_catalog();
    let class = catalog.class("Prescription").ok_or("no Prescription class")?;
    if class.field("prescription").is_some() {
        return Err("prescription unexpectedly projected".into());
    }
    let report = analyze(&catalog, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let cm = report.matrices.iter().find(|m| m.class == "Prescription").ok_or("no Prescription matrices")?;
    let j = cm.mup.col_index("prescription").ok_or("no prescription column")?;
    match cm.mup.derived_row[j] {
        1 => Ok("Derive[prescription] = 1".into()),
        v => Err(format!("Derive[prescription] = {v}")),
    }
}

// ---------------------------------------------------------------------------
// 3: archival

/// `nb_enfants` of the k-th monthly state from 1998-01.
pub fn monthly_sample(k: usize) -> i64 {
    ((k * 7 + 3) % 5) as i64 + (k / 12) as i64
}

pub fn monthly_object() -> WarehouseObject {
    let start = instant("mois:1998-01").ticks();
    let past = (0..36)
        .map(|k| {
            let value = Tuple::from([
                ("nb_enfants".to_string(), Value::Int(monthly_sample(k))),
                ("ville".to_string(), Value::text(if k % 2 == 0 { "Toulouse" } else { "Albi" })),
            ]);
            let iv = Interval::from_ticks(TemporalUnit::Mois, start + k as i64, start + k as i64).unwrap();
            State::new(value, TemporalDomain::single(iv))
        })
        .collect();
    let current = State::new(
        Tuple::from([("nb_enfants".to_string(), Value::Int(0)), ("ville".to_string(), Value::text("Albi"))]),
        TemporalDomain::from_now(Instant::new(TemporalUnit::Mois, start + 36)),
    );
    WarehouseObject {
        oid: "Personne#1".into(),
        lineage_key: Value::Ref("p1".into()),
        current: Some(current),
        past,
        archived: Vec::new(),
    }
}

fn mean(range: std::ops::Range<usize>) -> f64 {
    let n = range.len() as f64;
    range.map(|k| monthly_sample(k) as f64).sum::<f64>() / n
}

fn close(got: &Value, expected: f64) -> Result<(), String> {
    let x = got.as_f64().ok_or_else(|| format!("{got} is not numeric"))?;
    if (x - expected).abs() <= 1e-9 * expected.abs().max(1e-300) {
        Ok(())
    } else {
        Err(format!("avg {x}, oracle {expected}"))
    }
}

fn month_grains(from: &str, count: i64) -> BTreeSet<i64> {
    let s = instant(from).ticks();
    (s..s + count).collect()
}

pub fn check_archive_counts() -> Check {
    let pred = parse_predicate("not within annee:2000")?;
    let entries = [ArchiveEntry { func: AggFn::Avg, property: "nb_enfants".into() }];

    let mut o = monthly_object();
    let n = archive_object(&mut o, &pred, &entries, ArchiveMode::Classical, Weighting::PerState)
        .map_err(|e| e.to_string())?;
    if (n.consumed, n.produced) != (24, 1) || o.archived.len() != 1 || o.past.len() != 12 {
        return Err(format!("classical: consumed {} produced {}", n.consumed, n.produced));
    }
    close(&o.archived[0].get("nb_enfants"), mean(0..24))?;
    if o.archived[0].domain.grains() != month_grains("mois:1998-01", 24) {
        return Err(format!("classical domain {}", o.archived[0].domain));
    }

    let mut o = monthly_object();
    let n = archive_object(&mut o, &pred, &entries, ArchiveMode::Temporal(TemporalUnit::Annee), Weighting::PerState)
        .map_err(|e| e.to_string())?;
    if (n.consumed, n.produced) != (24, 2) || o.archived.len() != 2 {
        return Err(format!("temporal: consumed {} produced {}", n.consumed, n.produced));
    }
    for (k, year) in ["annee:1998", "annee:1999"].iter().enumerate() {
        let s = &o.archived[k];
        if s.domain != TemporalDomain::single(Interval::single(instant(year))) {
            return Err(format!("temporal state {k} covers {}", s.domain));
        }
        close(&s.get("nb_enfants"), mean(k * 12..k * 12 + 12))?;
    }
    Ok("classical 24 -> 1, temporal(annee) 24 -> 2".into())
}

// ---------------------------------------------------------------------------
// 4: annex mappings against nested-loop oracles

pub fn path_value(values: &Tuple, path: &[&str]) -> Value {
    let mut v = values.get(path[0]).cloned().unwrap_or(Value::Null);
    for seg in &path[1..] {
        v = v.as_struct().and_then(|m| m.get(*seg)).cloned().unwrap_or(Value::Null);
    }
    v
}

fn members(v: &Value) -> Vec<Value> {
    v.members().map(<[Value]>::to_vec).unwrap_or_default()
}

fn extent<'a>(snap: &'a SourceSnapshot, class: &str) -> &'a [SourceObject] {
    snap.classes.get(class).map(Vec::as_slice).unwrap_or(&[])
}

fn pick(o: &SourceObject, fields: &[(&str, &[&str])]) -> Tuple {
    fields.iter().map(|(name, path)| (name.to_string(), path_value(&o.values, path))).collect()
}

/// Praticiens joined with a Midi-Pyrenees cabinet they work in.
fn mp_praticiens(snap: &SourceSnapshot) -> Vec<&SourceObject> {
    let mut out = Vec::new();
    for p in extent(snap, "PRATICIEN") {
        for c in extent(snap, "CABINET") {
            if path_value(&c.values, &["adresse", "region"]) == Value::text("Midi-Pyrenees")
                && p.values.get("travaille") == Some(&Value::Ref(c.oid.clone()))
            {
                out.push(p);
            }
        }
    }
    out
}

pub const PERSONNE_FIELDS: [&str; 7] = ["nom", "prenom", "annee_n", "ville", "densite", "departement", "nb_enfants"];
pub const PRATICIEN_FIELDS: [&str; 10] = [
    "nom",
    "prenom",
    "annee_n",
    "categorie",
    "specialite",
    "ville",
    "densite",
    "departement",
    "consultations",
    "nb_enfants",
];
pub const PRESCRIPTION_FIELDS: [&str; 6] = ["honoraire", "prescripteur", "tension", "poids", "taille", "medicament"];
pub const MEDICAMENT_FIELDS: [&str; 6] = ["code", "generique", "categorie_molecule", "type_molecule", "quantite", "tarif"];

pub fn praticien_oracle(snap: &SourceSnapshot) -> Vec<Tuple> {
    mp_praticiens(snap)
        .into_iter()
        .map(|p| {
            let mut row = pick(
                p,
                &[
                    ("nom", &["nom"]),
                    ("prenom", &["prenom"]),
                    ("annee_n", &["annee_n"]),
                    ("categorie", &["categorie"]),
                    ("specialite", &["specialite"]),
                    ("ville", &["adresse", "ville"]),
                    ("densite", &["adresse", "densite"]),
                    ("departement", &["adresse", "departement"]),
                    ("consultations", &["consultations"]),
                ],
            );
            let kids = members(&path_value(&p.values, &["enfants"])).iter().filter(|v| !v.is_null()).count();
            row.insert("nb_enfants".into(), Value::Int(kids as i64));
            row
        })
        .collect()
}

pub fn prescription_oracle(snap: &SourceSnapshot) -> Vec<Tuple> {
    let praticiens = mp_praticiens(snap);
    let mut groups: BTreeMap<Tuple, Vec<Value>> = BTreeMap::new();
    for v in extent(snap, "VISITE") {
        for p in &praticiens {
            if !members(&path_value(&p.values, &["consultations"])).contains(&Value::Ref(v.oid.clone())) {
                continue;
            }
            for m in extent(snap, "MEDICAMENT") {
                if !members(&path_value(&v.values, &["prescription"])).contains(&Value::Ref(m.oid.clone())) {
                    continue;
                }
                let group = pick(
                    v,
                    &[
                        ("honoraire", &["honoraire"]),
                        ("prescripteur", &["prescripteur"]),
                        ("tension", &["tension"]),
                        ("poids", &["poids"]),
                        ("taille", &["taille"]),
                    ],
                );
                let member: Tuple = MEDICAMENT_FIELDS.iter().map(|f| (f.to_string(), path_value(&m.values, &[f]))).collect();
                groups.entry(group).or_default().push(Value::Struct(member));
            }
        }
    }
    groups
        .into_iter()
        .map(|(mut g, ms)| {
            g.insert("medicament".into(), Value::set(ms));
            g
        })
        .collect()
}

pub fn personne_oracle(snap: &SourceSnapshot) -> Vec<Tuple> {
    praticien_oracle(snap)
        .into_iter()
        .map(|r| r.into_iter().filter(|(k, _)| PERSONNE_FIELDS.contains(&k.as_str())).collect())
        .collect()
}

pub fn jeune_praticien_oracle(snap: &SourceSnapshot) -> Vec<Tuple> {
    praticien_oracle(snap)
        .into_iter()
        .filter(|r| matches!(r.get("annee_n"), Some(Value::Int(y)) if *y > 1960))
        .collect()
}

fn field_set(r: &EvalResult) -> BTreeSet<String> {
    r.field_names().into_iter().map(str::to_string).collect()
}

fn names(fields: &[&str]) -> BTreeSet<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

fn rows(r: &EvalResult) -> Vec<Tuple> {
    r.objects.iter().map(|o| o.values.clone()).collect()
}

pub fn check_mappings() -> Check {
    let catalog = annex_catalog();
    let snap = annex_snapshot(&catalog.schema);
    let size: usize = snap.classes.values().map(Vec::len).sum();
    if size > 30 {
        return Err(format!("snapshot has {size} objects"));
    }
    let results = catalog.evaluate(&snap).map_err(|(c, e)| format!("{c}: {e}"))?;
    let cases: [(&str, BTreeSet<String>, Vec<Tuple>); 4] = [
        ("Praticien", names(&PRATICIEN_FIELDS), praticien_oracle(&snap)),
        ("Prescription", names(&PRESCRIPTION_FIELDS), prescription_oracle(&snap)),
        ("Personne", names(&PERSONNE_FIELDS), personne_oracle(&snap)),
        ("Jeune_Praticien", names(&PRATICIEN_FIELDS), jeune_praticien_oracle(&snap)),
    ];
    let mut summary = Vec::new();
    for (class, fields, oracle) in cases {
        let r = results.get(class).ok_or_else(|| format!("{class} not evaluated"))?;
        if field_set(r) != fields {
            return Err(format!("{class} fields {:?}, expected {fields:?}", field_set(r)));
        }
        if oracle.is_empty() {
            return Err(format!("{class}: oracle extension is empty"));
        }
        if sorted(rows(r)) != sorted(oracle.clone()) {
            return Err(format!("{class} extension {:?}\noracle {:?}", sorted(rows(r)), sorted(oracle)));
        }
        summary.push(format!("{class} {}", oracle.len()));
    }
    let med = results["Prescription"].field("medicament").ok_or("no medicament field")?;
    let inner: BTreeSet<String> = med
        .ty
        .element()
        .and_then(|e| e.struct_fields())
        .map(|fs| fs.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    if inner != names(&MEDICAMENT_FIELDS) {
        return Err(format!("medicament members {inner:?}"));
    }
    Ok(summary.join(", "))
}

// ---------------------------------------------------------------------------
// 5: algebra laws on random instances

const TEXTS: [&str; 4] = ["w", "x", "y", "z"];
const OPS: [&str; 6] = ["=", "!=", "<", "<=", ">", ">="];

/// Two random source classes `A` (2..=6 properties) and `B` (1..=4). A
/// property is `Short` when its flag is set, `String` otherwise; cells index
/// a small value pool, `None` is null.
#[derive(Debug, Clone)]
pub struct Instance {
    pub a_types: Vec<bool>,
    pub b_types: Vec<bool>,
    pub a_rows: Vec<Vec<Option<u8>>>,
    pub b_rows: Vec<Vec<Option<u8>>>,
}

fn cell() -> impl Strategy<Value = Option<u8>> {
    prop_oneof![1 => Just(None), 6 => (0u8..4).prop_map(Some)]
}

pub fn instance() -> impl Strategy<Value = Instance> {
    (prop::collection::vec(any::<bool>(), 2..=6), prop::collection::vec(any::<bool>(), 1..=4))
        .prop_flat_map(|(at, bt)| {
            let (na, nb) = (at.len(), bt.len());
            (
                Just(at),
                Just(bt),
                prop::collection::vec(prop::collection::vec(cell(), na), 0..=20),
                prop::collection::vec(prop::collection::vec(cell(), nb), 0..=20),
            )
        })
        .prop_map(|(a_types, b_types, a_rows, b_rows)| Instance { a_types, b_types, a_rows, b_rows })
}

fn cell_value(is_int: bool, c: Option<u8>) -> Value {
    match c {
        None => Value::Null,
        Some(i) if is_int => Value::Int(i64::from(i)),
        Some(i) => Value::text(TEXTS[usize::from(i)]),
    }
}

fn literal(is_int: bool, i: u8) -> String {
    if is_int {
        i.to_string()
    } else {
        format!("\"{}\"", TEXTS[usize::from(i)])
    }
}

fn holds(v: &Value, op: &str, lit: &Value) -> bool {
    let ord = match (v, lit) {
        (Value::Int(a), Value::Int(b)) => a.cmp(b),
        (Value::Text(a), Value::Text(b)) => a.cmp(b),
        _ => return false,
    };
    match op {
        "=" => ord.is_eq(),
        "!=" => ord.is_ne(),
        "<" => ord.is_lt(),
        "<=" => ord.is_le(),
        ">" => ord.is_gt(),
        ">=" => ord.is_ge(),
        _ => unreachable!(),
    }
}

fn subset(n: usize, bits: u8) -> Vec<usize> {
    let s: Vec<usize> = (0..n).filter(|i| bits >> i & 1 == 1).collect();
    if s.is_empty() {
        vec![0]
    } else if s.len() == n {
        s[1..].to_vec()
    } else {
        s
    }
}

impl Instance {
    fn schema(&self) -> WarehouseSchema {
        let decl = |name: &str, prefix: char, types: &[bool]| {
            let attrs: String = types
                .iter()
                .enumerate()
                .map(|(k, int)| format!("    attribute {} {prefix}{k};\n", if *int { "Short" } else { "String" }))
                .collect();
            format!("interface {name} {{\n{attrs}}}\n")
        };
        parse_schema(&(decl("A", 'a', &self.a_types) + &decl("B", 'b', &self.b_types))).expect("generated schema")
    }

    fn maps(prefix: char, types: &[bool], rows: &[Vec<Option<u8>>]) -> Vec<Tuple> {
        rows.iter()
            .map(|r| r.iter().zip(types).enumerate().map(|(k, (c, t))| (format!("{prefix}{k}"), cell_value(*t, *c))).collect())
            .collect()
    }

    pub fn a_maps(&self) -> Vec<Tuple> {
        Self::maps('a', &self.a_types, &self.a_rows)
    }

    pub fn b_maps(&self) -> Vec<Tuple> {
        Self::maps('b', &self.b_types, &self.b_rows)
    }

    fn objects(prefix: char, maps: &[Tuple]) -> Vec<SourceObject> {
        maps.iter()
            .enumerate()
            .map(|(k, m)| SourceObject {
                oid: format!("{prefix}{k}"),
                values: m.iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k.clone(), v.clone())).collect(),
            })
            .collect()
    }

    fn snapshot_with(&self, a: &[Tuple]) -> SourceSnapshot {
        SourceSnapshot {
            at: None,
            classes: BTreeMap::from([
                ("A".to_string(), Self::objects('a', a)),
                ("B".to_string(), Self::objects('b', &self.b_maps())),
            ]),
        }
    }

    fn atom(&self, alias: &str, bytes: &[u8]) -> (String, usize, &'static str, Value) {
        let i = usize::from(bytes[0]) % self.a_types.len();
        let op = OPS[usize::from(bytes[1]) % OPS.len()];
        let lit = bytes[2] % 4;
        let t = self.a_types[i];
        (format!("{alias}.a{i} {op} {}", literal(t, lit)), i, op, cell_value(t, Some(lit)))
    }
}

fn eval_text(schema: &WarehouseSchema, snap: &SourceSnapshot, text: &str) -> Result<EvalResult, TestCaseError> {
    let e = parse_mapping(text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
    eval(&e, &EvalContext::new(schema, snap)).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))
}

pub fn law_mask_project(inst: &Instance, bytes: &[u8]) -> Result<(), TestCaseError> {
    let (schema, snap) = (inst.schema(), inst.snapshot_with(&inst.a_maps()));
    let n = inst.a_types.len();
    let hidden = subset(n, bytes[0]);
    let kept: Vec<usize> = (0..n).filter(|i| !hidden.contains(i)).collect();
    let list = |ix: &[usize]| ix.iter().map(|i| format!("s.a{i}")).collect::<Vec<_>>().join(", ");
    let masked = eval_text(&schema, &snap, &format!("mask [{}] (s A)", list(&hidden)))?;
    let projected = eval_text(&schema, &snap, &format!("project [{}] (s A)", list(&kept)))?;
    let kept_names: BTreeSet<String> = kept.iter().map(|i| format!("a{i}")).collect();
    ensure(field_set(&masked) == kept_names && field_set(&projected) == kept_names, || {
        format!("structures {:?} / {:?}, expected {kept_names:?}", field_set(&masked), field_set(&projected))
    })?;
    ensure(sorted(rows(&masked)) == sorted(rows(&projected)), || "mask and project extensions differ".into())?;
    let oracle: Vec<Tuple> = inst
        .a_maps()
        .into_iter()
        .map(|m| m.into_iter().filter(|(k, _)| kept_names.contains(k)).collect())
        .collect();
    ensure(sorted(rows(&projected)) == sorted(oracle), || "projection differs from oracle".into())
}

pub fn law_select_subset(inst: &Instance, bytes: &[u8]) -> Result<(), TestCaseError> {
    let (schema, maps) = (inst.schema(), inst.a_maps());
    let snap = inst.snapshot_with(&maps);
    let (pred, i, op, lit) = inst.atom("s", bytes);
    let r = eval_text(&schema, &snap, &format!("select [{pred}] (s A)"))?;
    let input: BTreeSet<String> = (0..maps.len()).map(|k| format!("a{k}")).collect();
    let got: BTreeSet<String> = r.objects.iter().filter_map(|o| o.identity.clone()).collect();
    ensure(got.len() == r.objects.len() && got.is_subset(&input), || format!("{pred}: {got:?} not within input"))?;
    let oracle: BTreeSet<String> =
        maps.iter().enumerate().filter(|(_, m)| holds(&m[&format!("a{i}")], op, &lit)).map(|(k, _)| format!("a{k}")).collect();
    ensure(got == oracle, || format!("{pred}: kept {got:?}, oracle {oracle:?}"))?;
    for o in &r.objects {
        let k: usize = o.identity.as_deref().unwrap_or("a0")[1..].parse().unwrap();
        ensure(o.values == maps[k], || format!("{pred}: row values altered"))?;
    }
    let all = eval_text(&schema, &snap, "select [true] (s A)")?;
    ensure(all.objects.len() == maps.len(), || "select [true] is not the identity".into())
}

pub fn law_join(inst: &Instance, bytes: &[u8]) -> Result<(), TestCaseError> {
    let (schema, a, b) = (inst.schema(), inst.a_maps(), inst.b_maps());
    let snap = inst.snapshot_with(&a);
    let candidates: Vec<(usize, usize)> = (0..inst.a_types.len())
        .flat_map(|i| (0..inst.b_types.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| inst.a_types[i] == inst.b_types[j])
        .collect();
    let Some(&(i, j)) = candidates.get(usize::from(bytes[0]) % candidates.len().max(1)) else {
        return Ok(());
    };
    let op = OPS[usize::from(bytes[1]) % OPS.len()];
    let r = eval_text(&schema, &snap, &format!("join [x.a{i} {op} y.b{j}] (x A, y B)"))?;
    let mut oracle = Vec::new();
    for (ka, ra) in a.iter().enumerate() {
        for (kb, rb) in b.iter().enumerate() {
            if holds(&ra[&format!("a{i}")], op, &rb[&format!("b{j}")]) {
                let mut merged = ra.clone();
                merged.extend(rb.clone());
                let key = Value::List(vec![Value::Ref(format!("a{ka}")), Value::Ref(format!("b{kb}"))]);
                oracle.push((key, merged));
            }
        }
    }
    let got: Vec<(Value, Tuple)> = r.objects.iter().map(|o| (o.key.clone(), o.values.clone())).collect();
    ensure(sorted(got) == sorted(oracle), || format!("join a{i} {op} b{j} differs from the filtered product"))
}

pub fn law_nest_unnest(inst: &Instance, bytes: &[u8]) -> Result<(), TestCaseError> {
    let schema = inst.schema();
    let distinct: Vec<Tuple> = inst.a_maps().into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let snap = inst.snapshot_with(&distinct);
    let n = inst.a_types.len();
    let group = subset(n, bytes[3]);
    let list = group.iter().map(|i| format!("s.a{i}")).collect::<Vec<_>>().join(", ");
    let nest = format!("nest [{list}]::m (s A)");

    let nested = eval_text(&schema, &snap, &nest)?;
    let gnames: BTreeSet<String> = group.iter().map(|i| format!("a{i}")).collect();
    let mut groups: BTreeMap<Tuple, Vec<Value>> = BTreeMap::new();
    for m in &distinct {
        let (g, rest): (Tuple, Tuple) = m.clone().into_iter().partition(|(k, _)| gnames.contains(k));
        groups.entry(g).or_default().push(Value::Struct(rest));
    }
    let oracle: Vec<Tuple> = groups
        .into_iter()
        .map(|(mut g, ms)| {
            g.insert("m".into(), Value::set(ms));
            g
        })
        .collect();
    ensure(sorted(rows(&nested)) == sorted(oracle), || format!("{nest} differs from grouping oracle"))?;

    let back = eval_text(&schema, &snap, &format!("unnest [n.m] (n {nest})"))?;
    let all: BTreeSet<String> = (0..n).map(|i| format!("a{i}")).collect();
    ensure(field_set(&back) == all, || format!("unnest structure {:?}", field_set(&back)))?;
    ensure(sorted(rows(&back)) == distinct, || "unnest(nest(A)) != A".into())
}

pub fn law_set_ops(inst: &Instance, bytes: &[u8]) -> Result<(), TestCaseError> {
    let (schema, maps) = (inst.schema(), inst.a_maps());
    let snap = inst.snapshot_with(&maps);
    let (p1, i1, op1, l1) = inst.atom("s", &bytes[0..3]);
    let (p2, i2, op2, l2) = inst.atom("t", &bytes[3..6]);
    let pick = |i: usize, op: &str, lit: &Value| -> BTreeSet<Tuple> {
        maps.iter().filter(|m| holds(&m[&format!("a{i}")], op, lit)).cloned().collect()
    };
    let (v1, v2) = (pick(i1, op1, &l1), pick(i2, op2, &l2));
    let operands = format!("(select [{p1}] (s A), select [{p2}] (t A))");
    let expected: [(&str, BTreeSet<Tuple>); 3] = [
        ("union", v1.union(&v2).cloned().collect()),
        ("intersect", v1.intersection(&v2).cloned().collect()),
        ("diff", v1.difference(&v2).cloned().collect()),
    ];
    for (op, oracle) in expected {
        let r = eval_text(&schema, &snap, &format!("{op} {operands}"))?;
        let got = rows(&r);
        let set: BTreeSet<Tuple> = got.iter().cloned().collect();
        ensure(set.len() == got.len(), || format!("{op} {operands} kept duplicate values"))?;
        ensure(set == oracle, || format!("{op} {operands}: {set:?}, oracle {oracle:?}"))?;
    }
    Ok(())
}

pub type Law = fn(&Instance, &[u8]) -> Result<(), TestCaseError>;

pub const LAWS: [(&str, Law); 5] = [
    ("mask/project complement", law_mask_project),
    ("selection within input", law_select_subset),
    ("join vs filtered product", law_join),
    ("nest/unnest inverse", law_nest_unnest),
    ("set ops vs value sets", law_set_ops),
];

pub fn check_law(law: Law, cases: u32) -> Result<(), String> {
    run_prop(cases, (instance(), prop::array::uniform8(any::<u8>())), |(inst, bytes)| law(&inst, &bytes))
}

pub fn check_algebra() -> Check {
    for (name, law) in LAWS {
        check_law(law, ALGEBRA_CASES).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("{} laws x {ALGEBRA_CASES} instances", LAWS.len()))
}

// ---------------------------------------------------------------------------
// 6: temporal domains against grain enumeration

pub fn interval_list() -> impl Strategy<Value = Vec<(i64, i64)>> {
    prop::collection::vec((0i64..=100, 0i64..=100).prop_map(|(a, b)| (a.min(b), a.max(b))), 0..8)
}

pub fn unit() -> impl Strategy<Value = TemporalUnit> {
    (0..TemporalUnit::ALL.len()).prop_map(|k| TemporalUnit::ALL[k])
}

pub fn domain(u: TemporalUnit, list: &[(i64, i64)]) -> TemporalDomain {
    normalize_domain(list.iter().map(|&(a, b)| Interval::from_ticks(u, a, b).unwrap()).collect()).unwrap()
}

pub fn grain_oracle(list: &[(i64, i64)]) -> BTreeSet<i64> {
    list.iter().flat_map(|&(a, b)| a..=b).collect()
}

pub fn law_normalize(u: TemporalUnit, list: &[(i64, i64)]) -> Result<(), TestCaseError> {
    let d = domain(u, list);
    ensure(d.grains() == grain_oracle(list), || format!("{list:?}: grains changed"))?;
    let again = normalize_domain(d.intervals().to_vec()).unwrap();
    ensure(again == d, || format!("{list:?}: normalize is not idempotent"))?;
    ensure(d.intervals().windows(2).all(|w| w[0].end_ticks() + 1 < w[1].start_ticks()), || {
        format!("{list:?}: {d} is not disjoint and non-contiguous")
    })
}

pub fn law_domain_ops(u: TemporalUnit, l1: &[(i64, i64)], l2: &[(i64, i64)]) -> Result<(), TestCaseError> {
    let (a, b) = (domain(u, l1), domain(u, l2));
    let (ga, gb) = (grain_oracle(l1), grain_oracle(l2));
    let fail = |e: wdw_core::temporal::TemporalError| TestCaseError::fail(e.to_string());
    let ops: [(&str, TemporalDomain, BTreeSet<i64>); 3] = [
        ("union", a.union(&b).map_err(fail)?, ga.union(&gb).copied().collect()),
        ("intersection", a.intersection(&b).map_err(fail)?, ga.intersection(&gb).copied().collect()),
        ("difference", a.difference(&b).map_err(fail)?, ga.difference(&gb).copied().collect()),
    ];
    for (name, got, oracle) in ops {
        ensure(got.grains() == oracle, || format!("{name} of {a} and {b} gave {got}"))?;
        ensure(normalize_domain(got.intervals().to_vec()).unwrap() == got, || format!("{name} result not normalized"))?;
    }
    Ok(())
}

pub fn check_finer_than() -> Result<(), String> {
    let all = TemporalUnit::ALL;
    for a in all {
        if a.finer_than(a) {
            return Err(format!("{a:?} finer than itself"));
        }
        for b in all {
            if a.finer_than(b) && b.finer_than(a) {
                return Err(format!("{a:?} and {b:?} finer than each other"));
            }
            for c in all {
                if a.finer_than(b) && b.finer_than(c) && !a.finer_than(c) {
                    return Err(format!("{a:?} < {b:?} < {c:?} but not {a:?} < {c:?}"));
                }
            }
        }
    }
    Ok(())
}

pub fn check_temporal() -> Check {
    run_prop(TEMPORAL_CASES, (unit(), interval_list()), |(u, l)| law_normalize(u, &l))
        .map_err(|e| format!("normalize: {e}"))?;
    run_prop(TEMPORAL_CASES, (unit(), interval_list(), interval_list()), |(u, l1, l2)| law_domain_ops(u, &l1, &l2))
        .map_err(|e| format!("domain ops: {e}"))?;
    check_finer_than()?;
    Ok(format!("{TEMPORAL_CASES} lists per law, finer_than over {} units", TemporalUnit::ALL.len()))
}

// ---------------------------------------------------------------------------
// 7: historization over a scripted tick sequence

pub const HISTORY_SCHEMA: &str = r#"
interface PERSONNE {
    attribute String nom;
    attribute String ville;
    attribute Short nb_enfants;
}

interface Personne {
}
mapping project [p.nom, p.ville, p.nb_enfants] (p PERSONNE)
with temporal filter {ville, nb_enfants};

config {
    refresh every 1 mois;
}
"#;

/// (instant, s1 ville, s1 nb_enfants, s2 nom). s1 keeps its nom; s2 keeps
/// ville and nb_enfants.
pub const SCRIPT: [(&str, &str, i64, &str); 5] = [
    ("mois:2000-01", "Toulouse", 0, "Martin"),
    ("mois:2000-02", "Albi", 0, "Martin-Roux"),
    ("mois:2000-03", "Albi", 1, "Martin"),
    ("mois:2000-04", "Rodez", 2, "Martin-Roux"),
    ("mois:2000-05", "Rodez", 3, "Martin"),
];

pub fn script_snapshot(k: usize) -> SourceSnapshot {
    let (_, ville, nb, nom) = SCRIPT[k];
    let obj = |oid: &str, nom: &str, ville: &str, nb: i64| SourceObject {
        oid: oid.into(),
        values: Tuple::from([
            ("nom".to_string(), Value::text(nom)),
            ("ville".to_string(), Value::text(ville)),
            ("nb_enfants".to_string(), Value::Int(nb)),
        ]),
    };
    SourceSnapshot {
        at: Some(instant(SCRIPT[k].0)),
        classes: BTreeMap::from([("PERSONNE".to_string(), vec![obj("s1", "Durand", ville, nb), obj("s2", nom, "Toulouse", 1)])]),
    }
}

pub fn scripted_store() -> Result<(Catalog, WarehouseStore), String> {
    let schema = parse_schema(HISTORY_SCHEMA).map_err(|e| e.to_string())?;
    let catalog = Catalog::resolve(&schema).map_err(|d| format!("{d:?}"))?;
    let mut store = initial_build(&catalog, &script_snapshot(0), instant(SCRIPT[0].0), &schema_hash(&schema))
        .map_err(|e| e.to_string())?;
    for (k, tick) in SCRIPT.iter().enumerate().skip(1) {
        refresh(&catalog, &mut store, &script_snapshot(k), instant(tick.0), None).map_err(|e| e.to_string())?;
    }
    Ok((catalog, store))
}

pub fn check_historization() -> Check {
    let (catalog, store) = scripted_store()?;
    let wc = catalog.class("Personne").ok_or("no Personne class")?;
    let objects = &store.extent("Personne").map_err(|e| e.to_string())?.objects;
    let by_key = |oid: &str| {
        objects.iter().find(|o| o.lineage_key == Value::Ref(oid.into())).ok_or_else(|| format!("no object for {oid}"))
    };
    let (s1, s2) = (by_key("s1")?, by_key("s2")?);
    let total: usize = objects.iter().map(|o| o.past.len()).sum();
    if s1.past.len() != 4 || total != 4 {
        return Err(format!("{} past states for s1, {total} in total", s1.past.len()));
    }
    if !s2.past.is_empty() {
        return Err(format!("nom changes produced {} past states", s2.past.len()));
    }
    for (prop, expected) in [
        ("ville", SCRIPT.map(|s| Value::text(s.1))),
        ("nb_enfants", SCRIPT.map(|s| Value::Int(s.2))),
    ] {
        let history = s1.history(wc, prop).map_err(|e| e.to_string())?;
        for (k, value) in expected.iter().enumerate() {
            let t = instant(SCRIPT[k].0);
            let hits: Vec<&Value> = history.iter().filter(|(d, _)| d.contains(t)).map(|(_, v)| v).collect();
            if hits != [value] {
                return Err(format!("{prop} at {t}: history gives {hits:?}, script {value}"));
            }
        }
    }
    let last = s2.current.as_ref().ok_or("s2 has no current state")?;
    if last.get("nom") != Value::text(SCRIPT[4].3) || last.domain.first_start() != Some(instant(SCRIPT[0].0)) {
        return Err(format!("s2 current state {:?}", last));
    }
    Ok("4 past states, history replays, nom-only changes update in place".into())
}

// ---------------------------------------------------------------------------
// 8: analyzer properties

/// Row status: -1 locally derivable, 0 locally not derivable, 1 known derivable.
pub fn mum(n: usize, edges: &[(usize, usize)], status: &[i8]) -> UsageMatrix {
    let ids: Vec<String> = (0..n).map(|k| format!("C::m{k}")).collect();
    let mut m = UsageMatrix::new(MatrixKind::Mum, ids.clone(), ids);
    for &(i, j) in edges {
        m.cells[i][j] = 1;
    }
    for (k, &s) in status.iter().enumerate() {
        m.derived_row[k] = s;
        m.derivable_col[k] = match s {
            0 => Some(0),
            1 => Some(1),
            _ => None,
        };
    }
    m
}

/// Brute-force derivability: a row is derivable when it is known derivable, or
/// locally derivable, outside every cycle, and unable to reach a locally
/// failing row or a cycle through locally derivable rows.
pub fn mum_oracle(n: usize, edges: &[(usize, usize)], status: &[i8]) -> Vec<bool> {
    let open = |k: usize| status[k] == -1;
    let mut reach = vec![vec![false; n]; n];
    for &(i, j) in edges {
        if i != j && open(i) && open(j) {
            reach[i][j] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let calls_failing = |k: usize| edges.iter().any(|&(i, j)| i == k && j != k && status[j] == 0);
    (0..n)
        .map(|i| match status[i] {
            1 => true,
            0 => false,
            _ => !(0..n).any(|k| (k == i || reach[i][k]) && (reach[k][k] || calls_failing(k))),
        })
        .collect()
}

pub fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<i8>)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..=2 * n),
            prop::collection::vec(prop_oneof![6 => Just(-1i8), 2 => Just(0i8), 1 => Just(1i8)], n),
        )
    })
}

pub fn law_mum(n: usize, edges: &[(usize, usize)], status: &[i8]) -> Result<(), TestCaseError> {
    let mut m = mum(n, edges, status);
    let outcome = analyse_mum(&mut m);
    let oracle = mum_oracle(n, edges, status);
    let got: Vec<bool> = m.derivable_col.iter().map(|d| *d == Some(1)).collect();
    ensure(m.derivable_col.iter().all(Option::is_some), || "undecided rows remain".into())?;
    ensure(got == oracle, || format!("edges {edges:?} status {status:?}: {got:?}, oracle {oracle:?}"))?;
    let cyclic = |k: usize| {
        let open: Vec<(usize, usize)> =
            edges.iter().copied().filter(|&(i, j)| i != j && status[i] == -1 && status[j] == -1).collect();
        let mut seen = BTreeSet::new();
        let mut todo: Vec<usize> = open.iter().filter(|e| e.0 == k).map(|e| e.1).collect();
        while let Some(x) = todo.pop() {
            if x == k {
                return true;
            }
            if seen.insert(x) {
                todo.extend(open.iter().filter(|e| e.0 == x).map(|e| e.1));
            }
        }
        false
    };
    for (&k, others) in &outcome.cycles {
        ensure(cyclic(k) && others.iter().all(|&o| cyclic(o)), || format!("row {k} reported in a cycle it is not on"))?;
    }
    Ok(())
}

pub fn matrix() -> impl Strategy<Value = UsageMatrix> {
    (1usize..=6, 1usize..=8).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..=1, c), r),
            prop::collection::vec(0i8..=1, c),
        )
            .prop_map(move |(cells, derived)| {
                let mut m = UsageMatrix::new(
                    MatrixKind::Mup,
                    (0..r).map(|k| format!("C::m{k}")).collect(),
                    (0..c).map(|k| format!("p{k}")).collect(),
                );
                m.cells = cells;
                m.derived_row = derived;
                m
            })
    })
}

fn local_outcomes(m: &UsageMatrix) -> Vec<(Option<u8>, BTreeSet<String>)> {
    let mut m = m.clone();
    (0..m.rows.len())
        .map(|i| {
            let missing = analyse_locale(i, &mut m);
            (m.derivable_col[i], missing)
        })
        .collect()
}

pub fn law_optimize(m: &UsageMatrix) -> Result<(), TestCaseError> {
    let (before, after) = (local_outcomes(m), local_outcomes(&optimize(m)));
    ensure(before == after, || format!("optimize changed outcomes: {before:?} vs {after:?}"))
}

pub fn law_monotone(m: &UsageMatrix, pick: usize) -> Result<(), TestCaseError> {
    let zeros: Vec<usize> = (0..m.cols.len()).filter(|&j| m.derived_row[j] == 0).collect();
    let Some(&j) = zeros.get(pick % zeros.len().max(1)) else { return Ok(()) };
    let mut more = m.clone();
    more.derived_row[j] = 1;
    for ((d0, miss0), (d1, miss1)) in local_outcomes(m).into_iter().zip(local_outcomes(&more)) {
        ensure(!(d0 == Some(1) && d1 != Some(1)) && miss1.is_subset(&miss0), || format!("deriving p{j} lost a method"))?;
    }
    Ok(())
}

pub fn law_monotone_global(n: usize, edges: &[(usize, usize)], status: &[i8], pick: usize) -> Result<(), TestCaseError> {
    let failing: Vec<usize> = (0..n).filter(|&k| status[k] == 0).collect();
    let Some(&k) = failing.get(pick % failing.len().max(1)) else { return Ok(()) };
    let mut relaxed = status.to_vec();
    relaxed[k] = -1;
    let run = |s: &[i8]| {
        let mut m = mum(n, edges, s);
        analyse_mum(&mut m);
        m.derivable_col
    };
    let (before, after) = (run(status), run(&relaxed));
    ensure(before.iter().zip(&after).all(|(b, a)| *b != Some(1) || *a == Some(1)), || {
        format!("making m{k} locally derivable lost a method: {before:?} -> {after:?}")
    })
}

pub const CYCLE_SCHEMA: &str = r#"
interface A {
    attribute Short x;
    Short f();
    Short g();
    Short h();
    Short k();
    Short p();
    Short q();
    Short r();
    method f() uses methods {g};
    method g() uses methods {f};
    method h() uses properties {x} methods {f};
    method k() uses properties {x};
    method p() uses methods {q};
    method q() uses methods {r};
    method r() uses methods {p};
}

interface W {
}
mapping project [a.x] (a A);
"#;

pub fn check_cycles() -> Result<(), String> {
    for (edges, members) in [(vec![(0, 1), (1, 0)], 2usize), (vec![(0, 1), (1, 2), (2, 0)], 3)] {
        let mut m = mum(members + 1, &[edges.clone(), vec![(members, 0)]].concat(), &vec![-1; members + 1]);
        let outcome = analyse_mum(&mut m);
        for k in 0..=members {
            if m.derivable_col[k] != Some(0) {
                return Err(format!("{members}-cycle: row {k} derivable"));
            }
        }
        for k in 0..members {
            let expected: BTreeSet<usize> = (0..members).filter(|&o| o != k).collect();
            if outcome.cycles.get(&k) != Some(&expected) {
                return Err(format!("{members}-cycle: row {k} cycle partners {:?}", outcome.cycles.get(&k)));
            }
        }
    }
    let schema = parse_schema(CYCLE_SCHEMA).map_err(|e| e.to_string())?;
    let catalog = Catalog::resolve(&schema).map_err(|d| format!("{d:?}"))?;
    let report = analyze(&catalog, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let set = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    let expected = [
        ("A::f", Verdict::Cycle(set(&["g"]))),
        ("A::g", Verdict::Cycle(set(&["f"]))),
        ("A::h", Verdict::Missing(set(&["f"]))),
        ("A::k", Verdict::Derivable),
        ("A::p", Verdict::Cycle(set(&["q", "r"]))),
        ("A::q", Verdict::Cycle(set(&["p", "r"]))),
        ("A::r", Verdict::Cycle(set(&["p", "q"]))),
    ];
    for (m, v) in expected {
        if report.verdicts.get(m) != Some(&v) {
            return Err(format!("{m}: {:?}, expected {v:?}", report.verdicts.get(m)));
        }
    }
    Ok(())
}

pub fn check_analyzer() -> Check {
    check_cycles()?;
    run_prop(ANALYZER_CASES, graph(), |(n, e, s)| law_mum(n, &e, &s)).map_err(|e| format!("global analysis: {e}"))?;
    run_prop(ANALYZER_CASES, matrix(), |m| law_optimize(&m)).map_err(|e| format!("optimize: {e}"))?;
    run_prop(ANALYZER_CASES, (matrix(), any::<usize>()), |(m, k)| law_monotone(&m, k))
        .map_err(|e| format!("monotonicity: {e}"))?;
    run_prop(ANALYZER_CASES, (graph(), any::<usize>()), |((n, e, s), k)| law_monotone_global(n, &e, &s, k))
        .map_err(|e| format!("global monotonicity: {e}"))?;
    Ok(format!("2- and 3-cycles, {ANALYZER_CASES} cases per property"))
}

// ---------------------------------------------------------------------------
// 9: round-trips

pub fn built_store() -> Result<(WarehouseSchema, WarehouseStore), String> {
    let catalog = annex_catalog();
    let schema = catalog.schema.clone();
    let mut store = initial_build(&catalog, &annex_snapshot(&schema), instant("mois:2000-01"), &schema_hash(&schema))
        .map_err(|e| e.to_string())?;
    let ticks = load_tickscript(&schema, &fixture("ticks.json")).map_err(|e| e.to_string())?;
    run_schedule(&catalog, &mut store, &ticks, Weighting::PerState).map_err(|e| e.to_string())?;
    Ok((schema, store))
}

pub fn check_roundtrips() -> Check {
    let schema = annex_schema();
    let printed = print_schema(&schema);
    let reparsed = parse_schema(&printed).map_err(|e| format!("printed schema: {e}"))?;
    if reparsed != schema || print_schema(&reparsed) != printed {
        return Err("schema parse/print is not a fixpoint".into());
    }

    let (schema, store) = built_store()?;
    let text = store_to_json(&store, Some(&schema));
    let back = parse_store(&text, Some(&schema_hash(&schema))).map_err(|e| e.to_string())?;
    if back != store || store_to_json(&back, Some(&schema)) != text {
        return Err("store save/load changed the store".into());
    }

    let report = analyze(&annex_catalog(), &BTreeSet::new()).map_err(|e| e.to_string())?;
    let mut count = 0;
    for m in report.matrices.iter().flat_map(|c| [&c.mup, &c.muo]).chain([&report.mum]) {
        let again = matrix_from_csv(&matrix_to_csv(m)).map_err(|e| e.to_string())?;
        if &again != m {
            return Err(format!("{} matrix changed through CSV", m.kind));
        }
        count += 1;
    }
    Ok(format!("schema, store and {count} matrices"))
}

pub type Criterion = (&'static str, fn() -> Check);

pub const CRITERIA: [Criterion; 9] = [
    ("derivability reproduction", check_derivability),
    ("derived-row rule", check_derived_row),
    ("archival counts", check_archive_counts),
    ("mapping reproduction", check_mappings),
    ("algebra property suite", check_algebra),
    ("temporal property suite", check_temporal),
    ("historization", check_historization),
    ("analyzer properties", check_analyzer),
    ("round-trips", check_roundtrips),
];
