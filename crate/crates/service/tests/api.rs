use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value as Json};
use tower::ServiceExt;

use modeladapt_core::fixture::{self, CURATOR_ROLE, RELEASED};
use modeladapt_core::model::RID;
use modeladapt_core::storage::{Database, Value};
use modeladapt_service::{router, AppState};

struct Call<'a> {
    method: Method,
    uri: &'a str,
    headers: Vec<(&'a str, &'a str)>,
    body: Body,
}

impl<'a> Call<'a> {
    fn new(method: Method, uri: &'a str) -> Self {
        Self {
            method,
            uri,
            headers: Vec::new(),
            body: Body::empty(),
        }
    }

    fn get(uri: &'a str) -> Self {
        Self::new(Method::GET, uri)
    }

    fn curator(mut self) -> Self {
        self.headers.push(("x-client-id", "curator-user"));
        self.headers.push(("x-client-roles", CURATOR_ROLE));
        self
    }

    fn header(mut self, k: &'a str, v: &'a str) -> Self {
        self.headers.push((k, v));
        self
    }

    fn json(mut self, v: Json) -> Self {
        self.headers.push(("content-type", "application/json"));
        self.body = Body::from(v.to_string());
        self
    }

    async fn send(self, app: &Router) -> (u16, Vec<u8>) {
        let mut req = Request::builder().method(self.method).uri(self.uri);
        for (k, v) in self.headers {
            req = req.header(k, v);
        }
        let res = app.clone().oneshot(req.body(self.body).unwrap()).await.unwrap();
        let status = res.status().as_u16();
        (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn run(self, app: &Router) -> (u16, Json) {
        let (status, bytes) = self.send(app).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Json::Null))
    }
}

fn app() -> (Router, AppState) {
    let catalog = fixture::catalog();
    let db = Database::in_memory();
    fixture::populate(&db, &catalog, 7).unwrap();
    let state = AppState::in_memory(catalog, db);
    (router(state.clone()), state)
}

#[tokio::test]
async fn identity_headers_are_checked() {
    let (app, _) = app();
    let (status, body) = Call::get("/model").header("x-client-roles", "curator").run(&app).await;
    assert_eq!(status, 401);
    assert_eq!(body["code"], "unauthorized");
    let (status, _) = Call::get("/model").header("x-client-id", "bad id!").run(&app).await;
    assert_eq!(status, 401);
    let (status, body) = Call::get("/model").header("x-client-id", "someone").run(&app).await;
    assert_eq!(status, 200);
    assert_eq!(body["client"]["id"], "someone");
}

#[tokio::test]
async fn writes_without_rights_are_401_or_403() {
    let (app, _) = app();
    let row = json!({"Title": "x", "Curation_Status": "In Progress"});
    let (status, body) = Call::new(Method::POST, "/entity/RNASeq/Study").json(row.clone()).run(&app).await;
    assert_eq!(status, 401, "{body}");
    let (status, body) = Call::new(Method::POST, "/entity/RNASeq/Study")
        .header("x-client-id", "reader")
        .json(row)
        .run(&app)
        .await;
    assert_eq!(status, 403, "{body}");
    assert!(body["message"].is_string() && body.get("location").is_some());
}

#[tokio::test]
async fn crud_round_trip() {
    let (app, state) = app();
    let (status, body) = Call::new(Method::POST, "/entity/RNASeq/Study")
        .curator()
        .json(json!([{"Title": "Round trip", "Curation_Status": "In Progress"}]))
        .run(&app)
        .await;
    assert_eq!(status, 201, "{body}");
    let rid = body["rows"][0]["RID"].as_str().unwrap().to_string();

    let uri = format!("/record/RNASeq/Study/{rid}");
    let (status, record) = Call::get(&uri).curator().run(&app).await;
    assert_eq!(status, 200);
    assert_eq!(record["values"]["Title"], "Round trip");
    assert_eq!(record["values"]["RCB"], "curator-user");
    // Anonymous clients cannot see unreleased rows.
    assert_eq!(Call::get(&uri).run(&app).await.0, 404);

    let (status, body) = Call::new(Method::PUT, "/entity/RNASeq/Study")
        .curator()
        .json(json!([{"RID": rid, "Title": "Renamed"}]))
        .run(&app)
        .await;
    assert_eq!(status, 200, "{body}");
    let (_, record) = Call::get(&uri).curator().run(&app).await;
    assert_eq!(record["values"]["Title"], "Renamed");

    let del = format!("/entity/RNASeq/Study?rid={rid}");
    let (status, body) = Call::new(Method::DELETE, &del).curator().run(&app).await;
    assert!(status == 200 || status == 204, "{status} {body}");
    assert!(state.db().snapshot().get(&fixture::study(), &rid).is_none());
    assert_eq!(Call::get(&uri).curator().run(&app).await.0, 404);
}

#[tokio::test]
async fn referenced_rows_cannot_be_deleted() {
    let (app, state) = app();
    let data = state.db().snapshot();
    let referenced = data
        .rows(&fixture::experiment())
        .find_map(|e| e.get("Study").and_then(Value::as_text).map(str::to_string))
        .unwrap();
    let uri = format!("/entity/RNASeq/Study?rid={referenced}");
    let (status, body) = Call::new(Method::DELETE, &uri).curator().run(&app).await;
    assert_eq!(status, 409, "{body}");
    assert!(body["code"].as_str().unwrap().starts_with("constraint."), "{body}");
    assert!(state.db().snapshot().get(&fixture::study(), &referenced).is_some());
}

#[tokio::test]
async fn bad_requests_name_the_problem() {
    let (app, _) = app();
    let (status, body) = Call::get("/entity/RNASeq/Study?filters=%5B").curator().run(&app).await;
    assert_eq!(status, 400, "{body}");
    let (status, _) = Call::get("/plan/RNASeq/Study?context=Not%20A%20Context").run(&app).await;
    assert_eq!(status, 400);
    let (status, _) = Call::get("/plan/RNASeq/Nope").run(&app).await;
    assert_eq!(status, 404);
    let (status, body) = Call::new(Method::POST, "/entity/RNASeq/Study")
        .curator()
        .json(json!({"Release_Date": "yesterday"}))
        .run(&app)
        .await;
    assert_eq!(status, 400, "{body}");
    assert_eq!(body["code"], "invalid_value");
}

#[tokio::test]
async fn picker_lists_candidate_targets() {
    let (app, state) = app();
    let (status, page) = Call::get("/picker/RNASeq/Experiment_Study_fkey?limit=1000").curator().run(&app).await;
    assert_eq!(status, 200, "{page}");
    assert_eq!(page["total"].as_u64().unwrap() as usize, state.db().snapshot().row_count(&fixture::study()));
    let (_, anon) = Call::get("/picker/RNASeq/Experiment_Study_fkey?limit=1000").run(&app).await;
    let released = state
        .db()
        .snapshot()
        .rows(&fixture::study())
        .filter(|r| r.get("Curation_Status").and_then(Value::as_text) == Some(RELEASED))
        .count();
    assert_eq!(anon["total"].as_u64().unwrap() as usize, released);
}

#[tokio::test]
async fn record_lists_relationships() {
    let (app, state) = app();
    let data = state.db().snapshot();
    let study = data.rows(&fixture::study()).next().unwrap();
    let rid = study[RID].as_text().unwrap();
    let experiments = data
        .rows(&fixture::experiment())
        .filter(|e| e.get("Study").and_then(Value::as_text) == Some(rid))
        .count();
    let (_, record) = Call::get(&format!("/record/RNASeq/Study/{rid}")).curator().run(&app).await;
    let rel = record["relationships"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["table"] == "RNASeq:Experiment")
        .expect("experiment relationship");
    assert_eq!(rel["total"].as_u64().unwrap() as usize, experiments);
}

#[tokio::test]
async fn assets_are_content_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let catalog_path = dir.path().join("catalog.json");
    std::fs::write(&catalog_path, fixture::catalog_json().to_string()).unwrap();
    let state = AppState::open(&catalog_path, None, Some(dir.path().join("assets")), None).unwrap();
    let app = router(state);

    let mut call = Call::new(Method::PUT, "/assets").header("x-client-id", "uploader");
    call.body = Body::from("hello asset");
    let (status, body) = call.run(&app).await;
    assert_eq!(status, 201, "{body}");
    let url = body["url"].as_str().unwrap().to_string();
    let (status, bytes) = Call::get(&url).send(&app).await;
    assert_eq!(status, 200);
    assert_eq!(bytes, b"hello asset");

    let mut anon = Call::new(Method::PUT, "/assets");
    anon.body = Body::from("x");
    assert_eq!(anon.run(&app).await.0, 401);
    assert_eq!(Call::get("/assets/00").run(&app).await.0 / 100, 4);
}

#[tokio::test]
async fn catalog_file_changes_apply_without_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.json");
    let mut doc = fixture::catalog_json();
    std::fs::write(&path, doc.to_string()).unwrap();
    let app = router(AppState::open(&path, None, None, None).unwrap());

    let (_, before) = Call::get("/plan/RNASeq/Study?context=compact").run(&app).await;
    doc["schemas"]["RNASeq"]["tables"]["Study"]["annotations"]["tag:isrd.isi.edu,2016:table-display"]["compact"] =
        json!({"page_size": 3});
    doc["version"] = json!(2);
    std::fs::write(&path, doc.to_string()).unwrap();
    let (_, after) = Call::get("/plan/RNASeq/Study?context=compact").run(&app).await;
    assert_ne!(before["page_size"], 3);
    assert_eq!(after["page_size"], 3);

    // A broken file keeps the last good catalog in service.
    std::fs::write(&path, "{").unwrap();
    let (status, model) = Call::get("/model").run(&app).await;
    assert_eq!(status, 200);
    assert_eq!(model["version"], 2);
}

#[tokio::test]
async fn bearer_tokens_map_to_identities() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.json");
    std::fs::write(&path, fixture::catalog_json().to_string()).unwrap();
    let tokens = dir.path().join("tokens.json");
    std::fs::write(&tokens, json!({"s3cret": {"id": "token-user", "roles": [CURATOR_ROLE]}}).to_string()).unwrap();
    let app = router(AppState::open(&path, None, None, Some(&tokens)).unwrap());

    let (status, model) = Call::get("/model").header("authorization", "Bearer s3cret").run(&app).await;
    assert_eq!(status, 200);
    assert_eq!(model["client"]["id"], "token-user");
    assert_eq!(model["rights"]["RNASeq:Study"]["columns"]["Curation_Status"]["update"], true);
    let (status, _) = Call::get("/model").header("authorization", "Bearer nope").run(&app).await;
    assert_eq!(status, 401);
}

#[tokio::test]
async fn diagnostics_follow_the_client() {
    let (app, _) = app();
    let (_, owner) = Call::get("/diagnostics").curator().run(&app).await;
    assert_eq!(owner.as_array().unwrap().len(), 0);
    let (_, anon) = Call::get("/diagnostics").run(&app).await;
    let anon = anon.as_array().unwrap();
    assert!(!anon.is_empty());
    assert!(anon.iter().all(|d| d["severity"] == "warning" && d["line"].as_str().unwrap().starts_with("WARNING")));
}
