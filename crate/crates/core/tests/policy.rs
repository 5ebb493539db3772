use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::{json, Map, Value as Json};

use modeladapt_core::annotation::validate_annotations;
use modeladapt_core::model::{parse_catalog, TableRef, RID};
use modeladapt_core::policy::{prune_model, ClientContext};
use modeladapt_core::query::compile_entity_set;
use modeladapt_core::storage::{Database, Page, Value};

const ROLES: [&str; 4] = ["*", "a", "b", "c"];
const RIGHTS: [&str; 5] = ["enumerate", "select", "insert", "update", "delete"];

/// Per right: unset, or the roles granted it.
type AclSpec = [Option<BTreeSet<&'static str>>; 5];

fn acl_spec() -> impl Strategy<Value = AclSpec> {
    let entry = proptest::option::weighted(0.5, proptest::sample::subsequence(ROLES.to_vec(), 0..=2))
        .prop_map(|o| o.map(|v| v.into_iter().collect::<BTreeSet<_>>()));
    [entry.clone(), entry.clone(), entry.clone(), entry.clone(), entry]
}

fn acl_json(spec: &AclSpec) -> Json {
    let mut out = Map::new();
    for (name, entry) in RIGHTS.iter().zip(spec) {
        if let Some(roles) = entry {
            out.insert(name.to_string(), json!(roles));
        }
    }
    Json::Object(out)
}

/// Independent reading of the inheritance rule: the most specific level that
/// sets a right decides it; nothing set means owners only.
fn granted(levels: &[&AclSpec], right: usize, roles: &BTreeSet<&str>, owner: bool) -> bool {
    if owner {
        return true;
    }
    levels
        .iter()
        .find_map(|l| l[right].as_ref())
        .is_some_and(|list| list.iter().any(|r| *r == "*" || roles.contains(r)))
}

fn visible(levels: &[&AclSpec], roles: &BTreeSet<&str>, owner: bool) -> bool {
    granted(levels, 0, roles, owner) && granted(levels, 1, roles, owner)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pruning_follows_acl_inheritance(
        cat_acl in acl_spec(),
        table_acl in acl_spec(),
        col_acl in acl_spec().prop_map(|mut a| { a[4] = None; a }),
        client_roles in proptest::sample::subsequence(vec!["a", "b", "c", "admin"], 0..=3),
    ) {
        let doc = json!({
            "owners": ["admin"],
            "acls": acl_json(&cat_acl),
            "schemas": {"S": {"tables": {
                "P": {"columns": [{"name": "Code", "type": "text"}], "keys": [{"columns": ["Code"]}]},
                "T": {
                    "columns": [
                        {"name": "Open", "type": "text"},
                        {"name": "Guarded", "type": "text", "acls": acl_json(&col_acl)}
                    ],
                    "foreign_keys": [{"name": ["S", "T_Guarded_fkey"], "from_columns": ["Guarded"],
                                      "to": {"schema": "S", "table": "P", "columns": ["Code"]}}],
                    "acls": acl_json(&table_acl)
                }
            }}}
        });
        let catalog = parse_catalog(doc.to_string().as_bytes()).unwrap();
        let client = ClientContext::new("u", client_roles.clone());
        let roles: BTreeSet<&str> = client_roles.iter().copied().collect();
        let owner = roles.contains("admin");
        let model = prune_model(&catalog, &client);

        let p_visible = visible(&[&cat_acl], &roles, owner);
        let t_visible = visible(&[&table_acl, &cat_acl], &roles, owner);
        let guarded_visible = t_visible && visible(&[&col_acl, &table_acl, &cat_acl], &roles, owner);
        let t = TableRef::new("S", "T");
        prop_assert_eq!(model.table(&TableRef::new("S", "P")).is_some(), p_visible);
        prop_assert_eq!(model.table(&t).is_some(), t_visible);
        if let Some(table) = model.table(&t) {
            prop_assert_eq!(table.column("Guarded").is_some(), guarded_visible);
            prop_assert_eq!(table.foreign_keys.len(), usize::from(guarded_visible && p_visible));
            let rights = model.column_rights(&t, "Guarded");
            prop_assert_eq!(rights.is_some(), guarded_visible);
            if let Some(r) = rights {
                let levels = [&col_acl, &table_acl, &cat_acl];
                prop_assert_eq!(r.update, granted(&levels, 3, &roles, owner));
                prop_assert_eq!(r.insert, granted(&levels, 2, &roles, owner));
            }
            let tr = model.table_rights(&t).unwrap();
            // Delete has no column-level override.
            prop_assert_eq!(tr.delete, granted(&[&table_acl, &cat_acl], 4, &roles, owner));
        }
    }

    #[test]
    fn row_policy_is_a_disjunction_of_matching_rules(
        rules in proptest::collection::vec(
            (proptest::sample::subsequence(ROLES.to_vec(), 1..=2),
             proptest::option::weighted(0.8, proptest::sample::subsequence(vec!["x", "y", "z"], 0..=2))),
            0..4),
        statuses in proptest::collection::vec(proptest::option::of(proptest::sample::select(vec!["x", "y", "z"])), 1..12),
        client_roles in proptest::sample::subsequence(vec!["a", "b", "c", "admin"], 0..=2),
    ) {
        let rule_json: Vec<Json> = rules
            .iter()
            .map(|(roles, values)| match values {
                Some(vs) => json!({"roles": roles, "predicate": {"column": "Status", "in": vs}}),
                None => json!({"roles": roles}),
            })
            .collect();
        let doc = json!({
            "owners": ["admin"],
            "acls": {"enumerate": ["*"], "select": ["*"]},
            "schemas": {"S": {"tables": {"T": {
                "columns": [{"name": "Status", "type": "text"}],
                "row_policy": {"rules": rule_json}
            }}}}
        });
        let catalog = parse_catalog(doc.to_string().as_bytes()).unwrap();
        let t = TableRef::new("S", "T");
        let db = Database::in_memory();
        let admin = ClientContext::new("loader", ["admin"]);
        let records: Vec<_> = statuses
            .iter()
            .map(|s| json!({"Status": s}).as_object().unwrap().clone())
            .collect();
        let rows = db.insert(&catalog, &t, &records, &admin).unwrap();

        let roles: BTreeSet<&str> = client_roles.iter().copied().collect();
        let owner = roles.contains("admin");
        let applies = |rs: &Vec<&str>| rs.iter().any(|r| *r == "*" || roles.contains(r));
        let matching: Vec<&Option<Vec<&str>>> = rules.iter().filter(|(rs, _)| applies(rs)).map(|(_, v)| v).collect();
        let expected: BTreeSet<String> = rows
            .iter()
            .zip(&statuses)
            .filter(|(_, s)| {
                owner
                    || rules.is_empty()
                    || matching.iter().any(|m| match m {
                        None => true,
                        Some(vs) => s.is_some_and(|s| vs.contains(&s)),
                    })
            })
            .map(|(r, _)| r[RID].as_text().unwrap().to_string())
            .collect();

        let client = ClientContext::new("u", client_roles.clone());
        let model = prune_model(&catalog, &client);
        let (validated, _) = validate_annotations(&catalog, &model);
        let plan = compile_entity_set(&model, &validated, &t, &[], None, None, Page::default()).unwrap();
        let got: BTreeSet<String> = db
            .execute(&model.catalog, &plan)
            .unwrap()
            .rows
            .iter()
            .filter_map(|r| r.get(RID).and_then(Value::as_text).map(str::to_string))
            .collect();
        prop_assert_eq!(got, expected);
    }
}
