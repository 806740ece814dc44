mod common;

use wdw_core::archive::Weighting;
use wdw_core::catalog::Catalog;
use wdw_core::dsl::{parse_schema, schema_hash};
use wdw_core::io::{load_tickscript, store_to_json};
use wdw_core::refresh::{initial_build, refresh, run_schedule, RefreshError, RefreshTick};
use wdw_core::value::Value;

use common::{instant, script_snapshot, scripted_store, HISTORY_SCHEMA, SCRIPT};

#[test]
fn scripted_ticks_yield_four_past_states() {
    common::check_historization().unwrap();
}

#[test]
fn past_states_close_the_tick_before_the_change() {
    let (_, store) = scripted_store().unwrap();
    let o = store.extent("Personne").unwrap().objects.iter().find(|o| o.lineage_key == Value::Ref("s1".into())).unwrap();
    let domains: Vec<String> = o.past.iter().map(|s| s.domain.to_string()).collect();
    assert_eq!(
        domains,
        [
            "<[mois:2000-01,mois:2000-01]>",
            "<[mois:2000-02,mois:2000-02]>",
            "<[mois:2000-03,mois:2000-03]>",
            "<[mois:2000-04,mois:2000-04]>",
        ]
    );
    assert_eq!(o.current.as_ref().unwrap().domain.to_string(), "<[mois:2000-05,NOW]>");
    for s in &o.past {
        let keys: Vec<&str> = s.value.keys().map(String::as_str).collect();
        assert_eq!(keys, ["nb_enfants", "ville"], "past states hold temporal properties only");
    }
    for tick in SCRIPT {
        let s = o.state_at(instant(tick.0)).unwrap().unwrap();
        assert_eq!(s.get("nb_enfants"), Value::Int(tick.2));
    }
}

#[test]
fn refresh_reports_count_each_kind_of_change() {
    let schema = parse_schema(HISTORY_SCHEMA).unwrap();
    let catalog = Catalog::resolve(&schema).unwrap();
    let mut store = initial_build(&catalog, &script_snapshot(0), instant(SCRIPT[0].0), "h").unwrap();
    let r = refresh(&catalog, &mut store, &script_snapshot(1), instant(SCRIPT[1].0), None).unwrap();
    let c = &r.classes["Personne"];
    assert_eq!((c.historized, c.updated, c.created, c.retired), (1, 1, 0, 0));
    let r = refresh(&catalog, &mut store, &script_snapshot(1), instant("mois:2000-03"), None).unwrap();
    assert_eq!(r.classes["Personne"].unchanged, 2);
}

#[test]
fn vanished_objects_retire_and_come_back() {
    let schema = parse_schema(HISTORY_SCHEMA).unwrap();
    let catalog = Catalog::resolve(&schema).unwrap();
    let mut store = initial_build(&catalog, &script_snapshot(0), instant("mois:2000-01"), "h").unwrap();
    let mut gone = script_snapshot(0);
    gone.classes.get_mut("PERSONNE").unwrap().retain(|o| o.oid != "s2");
    let r = refresh(&catalog, &mut store, &gone, instant("mois:2000-02"), None).unwrap();
    assert_eq!(r.classes["Personne"].retired, 1);
    let s2 = |store: &wdw_core::model::WarehouseStore| {
        store.extent("Personne").unwrap().objects.iter().find(|o| o.lineage_key == Value::Ref("s2".into())).cloned().unwrap()
    };
    let retired = s2(&store);
    assert!(!retired.is_active());
    assert_eq!(retired.past.last().unwrap().domain.to_string(), "<[mois:2000-01,mois:2000-01]>");

    let r = refresh(&catalog, &mut store, &script_snapshot(0), instant("mois:2000-03"), None).unwrap();
    assert_eq!(r.classes["Personne"].revived, 1);
    let back = s2(&store);
    assert_eq!(back.oid, retired.oid);
    assert!(back.is_active());
    assert_eq!(back.current.unwrap().domain.to_string(), "<[mois:2000-03,NOW]>");
    assert_eq!(store.extent("Personne").unwrap().objects.len(), 2);
}

#[test]
fn ticks_must_move_forward() {
    let (catalog, mut store) = scripted_store().unwrap();
    let err = refresh(&catalog, &mut store, &script_snapshot(0), instant("mois:2000-05"), None).unwrap_err();
    assert!(matches!(err, RefreshError::NonMonotonicTick { .. }), "{err}");
    let err = refresh(&catalog, &mut store, &script_snapshot(0), instant("annee:2001"), None).unwrap_err();
    assert!(err.to_string().contains("annee"), "{err}");
}

#[test]
fn schedules_respect_refresh_periods() {
    let catalog = common::annex_catalog();
    let schema = catalog.schema.clone();
    let snap = common::annex_snapshot(&schema);
    let mut store = initial_build(&catalog, &snap, instant("mois:2000-01"), &schema_hash(&schema)).unwrap();
    let tick = |at: &str, env: Option<&str>| RefreshTick {
        at: instant(at),
        environment: env.map(str::to_string),
        snapshot: snap.clone(),
        archive: false,
    };
    let err = run_schedule(&catalog, &mut store, &[tick("mois:2000-03", Some("activite"))], Weighting::PerState).unwrap_err();
    assert!(matches!(err, RefreshError::ScheduleViolation { .. }), "{err}");
    let ok = run_schedule(&catalog, &mut store, &[tick("mois:2000-04", Some("activite"))], Weighting::PerState).unwrap();
    assert_eq!(ok[0].classes.keys().collect::<Vec<_>>(), ["Prescription"]);
    let err = run_schedule(&catalog, &mut store, &[tick("mois:2000-02", Some("nope"))], Weighting::PerState).unwrap_err();
    assert!(matches!(err, RefreshError::UnknownEnvironment(_)));
    let global = run_schedule(&catalog, &mut store, &[tick("mois:2000-02", None)], Weighting::PerState).unwrap();
    assert!(!global[0].classes.contains_key("Prescription"));
    assert_eq!(global[0].classes.len(), 3);
}

#[test]
fn annex_ticks_historize_the_moved_praticien() {
    let (_, store) = common::built_store().unwrap();
    let moved = |class: &str| {
        store.extent(class).unwrap().objects.iter().filter(|o| !o.past.is_empty()).count()
    };
    assert_eq!(moved("Praticien"), 1);
    assert_eq!(moved("Personne"), 1);
    assert_eq!(moved("Jeune_Praticien"), 0);
    let p = store.extent("Praticien").unwrap().objects.iter().find(|o| !o.past.is_empty()).unwrap();
    assert_eq!(p.past[0].get("ville"), Value::text("Toulouse"));
    assert_eq!(p.current.as_ref().unwrap().get("ville"), Value::text("Albi"));
    assert_eq!(store.extent("Prescription").unwrap().objects.len(), 4);
}

#[test]
fn identical_inputs_give_identical_stores() {
    let (schema, a) = common::built_store().unwrap();
    let (_, b) = common::built_store().unwrap();
    assert_eq!(store_to_json(&a, Some(&schema)), store_to_json(&b, Some(&schema)));
    let ticks = load_tickscript(&schema, &common::fixture("ticks.json")).unwrap();
    assert_eq!(ticks.len(), 4);
}
