use std::fs::OpenOptions;
use std::io::Write;

use proptest::prelude::*;
use serde_json::{json, Value as Json};

use modeladapt_core::model::{parse_catalog, Catalog, ScalarType, TableRef, RID};
use modeladapt_core::policy::ClientContext;
use modeladapt_core::storage::load::{read_csv, read_jsonl};
use modeladapt_core::storage::{
    decode_rid, encode_rid, is_valid_rid, ColumnRef, Database, Page, Predicate, Projection, QueryPlan, Record, Row,
    SortKey, StorageError, Value,
};

fn catalog() -> Catalog {
    let doc = json!({
        "owners": ["admin"],
        "acls": {"enumerate": ["*"], "select": ["*"]},
        "schemas": {"S": {"tables": {
            "T": {
                "columns": [
                    {"name": "Label", "type": "text"},
                    {"name": "N", "type": "int"},
                    {"name": "D", "type": "date"}
                ]
            }
        }}}
    });
    parse_catalog(doc.to_string().as_bytes()).unwrap()
}

fn table() -> TableRef {
    TableRef::new("S", "T")
}

fn admin() -> ClientContext {
    ClientContext::new("admin-user", ["admin"])
}

fn record(v: Json) -> Record {
    v.as_object().unwrap().clone()
}

fn rid(row: &Row) -> String {
    row[RID].as_text().unwrap().to_string()
}

fn all_rows(db: &Database) -> Vec<Row> {
    db.snapshot().rows(&table()).cloned().collect()
}

#[test]
fn rid_encoding_round_trips() {
    for n in [0u64, 1, 31, 32, 1023, 1 << 20, u32::MAX as u64] {
        let s = encode_rid(n);
        assert!(is_valid_rid(&s), "{s}");
        assert_eq!(decode_rid(&s), Some(n));
    }
    assert!(!is_valid_rid(""));
}

#[test]
fn reopen_replays_the_change_log() {
    let dir = tempfile::tempdir().unwrap();
    let cat = catalog();
    let expected = {
        let db = Database::open(dir.path(), &cat).unwrap();
        let rows = db
            .insert(&cat, &table(), &[record(json!({"Label": "a", "N": 1})), record(json!({"Label": "b"}))], &admin())
            .unwrap();
        db.update_rows(&cat, &table(), &[(rid(&rows[0]), record(json!({"N": 5})))], &admin())
            .unwrap();
        db.delete(&cat, &table(), &[rid(&rows[1])], &admin()).unwrap();
        all_rows(&db)
    };
    let reopened = Database::open(dir.path(), &cat).unwrap();
    assert_eq!(all_rows(&reopened), expected);
    assert_eq!(expected.len(), 1);
    assert_eq!(expected[0]["N"], Value::Int(5));

    // RIDs keep advancing after a restart.
    let next = reopened.insert(&cat, &table(), &[record(json!({"Label": "c"}))], &admin()).unwrap();
    assert!(decode_rid(&rid(&next[0])) > decode_rid(&rid(&expected[0])));
}

#[test]
fn checkpoint_then_log_and_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let cat = catalog();
    let expected = {
        let db = Database::open(dir.path(), &cat).unwrap();
        db.insert(&cat, &table(), &[record(json!({"Label": "before"}))], &admin()).unwrap();
        db.checkpoint().unwrap();
        db.insert(&cat, &table(), &[record(json!({"Label": "after"}))], &admin()).unwrap();
        all_rows(&db)
    };
    let log = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "log"))
        .expect("change log file");
    OpenOptions::new().append(true).open(&log).unwrap().write_all(b"{\"put\":").unwrap();
    let reopened = Database::open(dir.path(), &cat).unwrap();
    assert_eq!(all_rows(&reopened), expected);
}

#[test]
fn csv_empty_cells_are_null() {
    let records = read_csv("Label,N\nx,\n,3\n".as_bytes()).unwrap();
    assert_eq!(records[0]["N"], Json::Null);
    assert_eq!(records[1]["Label"], Json::Null);
    assert_eq!(records[1]["N"], json!("3"));
    let db = Database::in_memory();
    let rows = db.insert(&catalog(), &table(), &records, &admin()).unwrap();
    assert_eq!(rows[1]["N"], Value::Int(3));

    let lines = read_jsonl("{\"Label\":\"y\"}\n\n{\"N\":4}\n".as_bytes()).unwrap();
    assert_eq!(lines.len(), 2);
}

#[test]
fn bad_values_and_system_columns_are_rejected() {
    let db = Database::in_memory();
    let cat = catalog();
    let err = db.insert(&cat, &table(), &[record(json!({"N": "many"}))], &admin()).unwrap_err();
    assert!(matches!(err, StorageError::InvalidValue { .. }), "{err:?}");
    let err = db.insert(&cat, &table(), &[record(json!({"RID": "1-0000"}))], &admin()).unwrap_err();
    assert!(matches!(err, StorageError::InvalidValue { .. }), "{err:?}");
    let err = db.insert(&cat, &table(), &[record(json!({"Nope": 1}))], &admin()).unwrap_err();
    assert!(!matches!(err, StorageError::Constraint { .. }), "{err:?}");
    assert_eq!(db.snapshot().row_count(&table()), 0);
}

#[derive(Debug, Clone)]
struct Spec {
    label: Option<String>,
    n: Option<i64>,
    day: Option<u32>,
}

fn spec() -> impl Strategy<Value = Spec> {
    (
        proptest::option::of("[a-cA-C]{0,3}"),
        proptest::option::of(-5i64..5),
        proptest::option::of(1u32..28),
    )
        .prop_map(|(label, n, day)| Spec { label, n, day })
}

#[derive(Debug, Clone)]
enum Pred {
    Between(Option<i64>, Option<i64>),
    Ilike(String),
    In(Vec<Option<i64>>),
    DateBetween(Option<u32>, Option<u32>),
}

fn pred() -> impl Strategy<Value = Pred> {
    prop_oneof![
        (proptest::option::of(-6i64..6), proptest::option::of(-6i64..6)).prop_map(|(a, b)| Pred::Between(a, b)),
        "[a-cA-C]{0,2}".prop_map(Pred::Ilike),
        proptest::collection::vec(proptest::option::of(-5i64..5), 1..3).prop_map(Pred::In),
        (proptest::option::of(1u32..28), proptest::option::of(1u32..28)).prop_map(|(a, b)| Pred::DateBetween(a, b)),
    ]
}

fn date(day: u32) -> Value {
    Value::from_json(&json!(format!("2020-03-{day:02}")), ScalarType::Date).unwrap()
}

fn to_predicate(p: &Pred) -> Predicate {
    match p {
        Pred::Between(a, b) => Predicate::Between {
            column: ColumnRef::base("N"),
            min: a.map(Value::Int),
            max: b.map(Value::Int),
        },
        Pred::Ilike(t) => Predicate::Ilike(ColumnRef::base("Label"), t.clone()),
        Pred::In(vs) => Predicate::In(
            ColumnRef::base("N"),
            vs.iter().map(|v| v.map(Value::Int).unwrap_or(Value::Null)).collect(),
        ),
        Pred::DateBetween(a, b) => Predicate::Between {
            column: ColumnRef::base("D"),
            min: a.map(date),
            max: b.map(date),
        },
    }
}

/// Brute-force reading of each predicate over the generating spec.
fn holds(p: &Pred, s: &Spec) -> bool {
    match p {
        Pred::Between(a, b) => s.n.is_some_and(|n| a.is_none_or(|a| n >= a) && b.is_none_or(|b| n <= b)),
        Pred::Ilike(t) => s
            .label
            .as_ref()
            .is_some_and(|l| l.to_lowercase().contains(&t.to_lowercase())),
        Pred::In(vs) => vs.contains(&s.n),
        Pred::DateBetween(a, b) => s.day.is_some_and(|d| a.is_none_or(|a| d >= a) && b.is_none_or(|b| d <= b)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn predicates_sort_and_paging_match_a_scan(
        specs in proptest::collection::vec(spec(), 0..25),
        preds in proptest::collection::vec(pred(), 0..3),
        descending in any::<bool>(),
        offset in 0usize..10,
        limit in 1usize..10,
    ) {
        let cat = catalog();
        let db = Database::in_memory();
        let records: Vec<Record> = specs
            .iter()
            .map(|s| record(json!({"Label": s.label, "N": s.n, "D": s.day.map(|d| format!("2020-03-{d:02}"))})))
            .collect();
        let rows = db.insert(&cat, &table(), &records, &admin()).unwrap();

        let mut expected: Vec<(Option<i64>, String)> = rows
            .iter()
            .zip(&specs)
            .filter(|(_, s)| preds.iter().all(|p| holds(p, s)))
            .map(|(r, s)| (s.n, rid(r)))
            .collect();
        // Nulls sort last in either direction; RID breaks ties ascending.
        expected.sort_by(|a, b| {
            let ord = match (a.0, b.0) {
                (None, None) => std::cmp::Ordering::Equal,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (Some(_), None) => std::cmp::Ordering::Less,
                (Some(x), Some(y)) if descending => y.cmp(&x),
                (Some(x), Some(y)) => x.cmp(&y),
            };
            ord.then_with(|| a.1.cmp(&b.1))
        });
        let total = expected.len();
        let page: Vec<String> = expected.into_iter().skip(offset).take(limit).map(|e| e.1).collect();

        let mut plan = QueryPlan::new(table(), Projection::Entity { instance: 0, columns: vec![RID.to_string()] });
        plan.predicates = preds.iter().map(to_predicate).collect();
        plan.sort = vec![
            SortKey { column: ColumnRef::base("N"), descending },
            SortKey { column: ColumnRef::base(RID), descending: false },
        ];
        plan.page = Page { limit: Some(limit), offset };
        let rs = db.execute(&cat, &plan).unwrap();
        prop_assert_eq!(rs.total, Some(total));
        prop_assert_eq!(rs.rows.iter().map(rid).collect::<Vec<_>>(), page);
    }
}
