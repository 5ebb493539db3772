use modeladapt_core::annotation::{validate_annotations, Severity};
use modeladapt_core::fixture;
use modeladapt_core::interpret::{plan, FacetKind, PropertyKind};
use modeladapt_core::policy::{prune_model, ClientContext};

const CONTEXTS: [&str; 7] = ["compact", "compact/brief", "detailed", "entry", "entry/create", "entry/edit", "filter"];

#[test]
fn every_table_plans_in_every_context() {
    let catalog = fixture::catalog();
    for client in [fixture::admin(), fixture::curator(), ClientContext::anonymous()] {
        let model = prune_model(&catalog, &client);
        let (validated, _) = validate_annotations(&catalog, &model);
        for table in model.catalog.tables() {
            for ctx in CONTEXTS {
                let p = plan(&table.table_ref(), ctx, &model, &validated)
                    .unwrap_or_else(|e| panic!("{} {ctx}: {e}", table.table_ref()));
                assert!(!p.properties.is_empty() || ctx == "filter", "{} {ctx}", table.table_ref());
                assert!(p.page_size > 0);
                if ctx.starts_with("entry") {
                    assert!(p.properties.iter().all(|x| !x.source.multivalued), "{} {ctx}", table.table_ref());
                }
            }
        }
    }
}

#[test]
fn hidden_references_warn_and_dangling_ones_error() {
    let catalog = fixture::catalog();
    let owner = prune_model(&catalog, &fixture::admin());
    let (_, diagnostics) = validate_annotations(&catalog, &owner);
    assert!(diagnostics.is_empty(), "{diagnostics:?}");

    let anon = prune_model(&catalog, &ClientContext::anonymous());
    let (validated, diagnostics) = validate_annotations(&catalog, &anon);
    assert!(!diagnostics.is_empty());
    for d in &diagnostics {
        assert_eq!(d.severity, Severity::Warning, "{d}");
        assert!(d.message.ends_with("(hidden for this client)"), "{d}");
    }
    let p = plan(&fixture::study(), "compact", &anon, &validated).unwrap();
    assert!(p.properties.iter().all(|x| !x.name.contains("Curation_Status")));
    let f = plan(&fixture::study(), "filter", &anon, &validated).unwrap();
    assert_eq!(f.facets.len(), 5);
}

#[test]
fn study_filter_facets() {
    let catalog = fixture::catalog();
    let model = prune_model(&catalog, &fixture::curator());
    let (validated, _) = validate_annotations(&catalog, &model);
    let f = plan(&fixture::study(), "filter", &model, &validated).unwrap();
    let kinds: Vec<FacetKind> = f.facets.iter().map(|x| x.kind).collect();
    assert_eq!(
        kinds,
        [
            FacetKind::Choice,
            FacetKind::Choice,
            FacetKind::Choice,
            FacetKind::Range,
            FacetKind::Choice,
            FacetKind::TextSearch
        ]
    );
    assert!(f.facets[1].source.entity_mode && f.facets[1].source.hops.len() == 5);
    assert!(!f.facets[0].source.entity_mode);
}

#[test]
fn detailed_study_lists_experiments() {
    let catalog = fixture::catalog();
    let model = prune_model(&catalog, &fixture::curator());
    let (validated, _) = validate_annotations(&catalog, &model);
    let p = plan(&fixture::study(), "detailed", &model, &validated).unwrap();
    assert!(p.relationships.iter().any(|r| r.via.end_table() == &fixture::experiment()));
    let aggregates: Vec<&str> = p
        .properties
        .iter()
        .filter(|x| x.kind == PropertyKind::Pseudo && x.source.aggregate.is_some())
        .map(|x| x.name.as_str())
        .collect();
    assert!(aggregates.contains(&"Anatomical_Source"), "{aggregates:?}");
}
