use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use graymod_cli::server::router;
use graymod_core::gradcore::seeded;
use graymod_core::metrics::ScoredSet;
use graymod_core::models::{ListEntry, WordList};
use graymod_core::service::ModerationService;
use graymod_core::{Model, ModelConfig, Scorer, Thresholds, Variant, Vocabulary};

fn list_scorer() -> Scorer {
    let entries = [("bad", 0.95), ("meh", 0.5), ("fine", 0.1)]
        .into_iter()
        .map(|(w, p)| {
            let entry = ListEntry {
                doc_freq: 20,
                rejected_df: (p * 20.0) as usize,
                precision: p,
            };
            (w.to_string(), entry)
        })
        .collect();
    Scorer::list(WordList {
        entries,
        min_df: 10,
    })
}

fn service() -> Arc<ModerationService> {
    let svc = ModerationService::in_memory();
    svc.set_scorer(list_scorer());
    svc.set_thresholds(Thresholds {
        t_a: 0.3,
        t_r: 0.9,
        coverage: 0.8,
        ..Thresholds::fixed(0.5)
    })
    .unwrap();
    let p: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
    let gold: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i >= 12))).collect();
    let ts: Vec<i64> = (0..20).collect();
    svc.register_dev(ScoredSet::from_parts(&p, &gold, &ts).unwrap(), 2.0, 100)
        .unwrap();
    Arc::new(svc)
}

async fn call(
    svc: &Arc<ModerationService>,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn post_comment(svc: &Arc<ModerationService>, text: &str, ts: i64) -> Value {
    let (status, body) = call(
        svc,
        Method::POST,
        "/api/comments",
        Some(json!({ "text": text, "ts": ts })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

#[tokio::test]
async fn comments_are_routed_and_queued() {
    let svc = service();
    let rej = post_comment(&svc, "so bad", 3).await;
    assert_eq!(rej["decision"], "auto_reject");
    assert_eq!(rej["p"], 0.95);
    assert_eq!(rej["thresholds_version"], 1);
    assert!(rej["model_version"].as_str().unwrap().starts_with("list-"));
    assert!(rej.get("attention").is_none());
    let keys: Vec<&str> = rej
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert_eq!(keys.len(), 5, "{keys:?}");

    let g2 = post_comment(&svc, "meh", 9).await;
    let g1 = post_comment(&svc, "meh again", 4).await;
    assert_eq!(
        post_comment(&svc, "fine", 5).await["decision"],
        "auto_accept"
    );

    let (status, page) = call(&svc, Method::GET, "/api/queue?status=gray", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page["total"], 2);
    let ids: Vec<&Value> = page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| &i["id"])
        .collect();
    assert_eq!(ids, [&g1["id"], &g2["id"]]);
    assert_eq!(page["items"][0]["decision"], "gray_pending");

    let (_, page) = call(&svc, Method::GET, "/api/queue?limit=1&offset=1", None).await;
    assert_eq!(page["total"], 2);
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    assert_eq!(page["items"][0]["id"], g2["id"]);

    let (_, all) = call(&svc, Method::GET, "/api/queue?status=all", None).await;
    assert_eq!(all["total"], 4);
    let (status, err) = call(&svc, Method::GET, "/api/queue?status=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "bad_request");
    let (status, _) = call(&svc, Method::GET, "/api/queue?limit=-1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn decisions_follow_the_contract() {
    let svc = service();
    let gray = post_comment(&svc, "meh", 1).await;
    let auto = post_comment(&svc, "bad", 2).await;
    let uri = format!("/api/queue/{}/decision", gray["id"].as_str().unwrap());

    let (status, item) = call(
        &svc,
        Method::POST,
        &uri,
        Some(json!({ "label": "accept", "moderator": "ann" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["decision"], "human_accept");
    assert_eq!(item["decided_by"], "ann");
    assert!(item["decided_at"].is_i64());

    let (status, again) = call(
        &svc,
        Method::POST,
        &uri,
        Some(json!({ "label": "accept", "moderator": "bob" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again, item);

    let (status, err) = call(
        &svc,
        Method::POST,
        &uri,
        Some(json!({ "label": "reject", "moderator": "bob" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "conflict");

    let (_, page) = call(&svc, Method::GET, "/api/queue", None).await;
    assert_eq!(page["total"], 0);

    let auto_uri = format!("/api/queue/{}/decision", auto["id"].as_str().unwrap());
    let (status, err) = call(
        &svc,
        Method::POST,
        &auto_uri,
        Some(json!({ "label": "reject", "moderator": "x" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("not in gray zone"));

    let (status, err) = call(
        &svc,
        Method::POST,
        "/api/queue/c99999999/decision",
        Some(json!({ "label": "reject", "moderator": "x" })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "not_found");

    let (status, _) = call(
        &svc,
        Method::POST,
        &uri,
        Some(json!({ "label": "maybe", "moderator": "x" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn thresholds_and_metrics() {
    let svc = service();
    let (status, th) = call(&svc, Method::GET, "/api/thresholds", None).await;
    assert_eq!(status, StatusCode::OK);
    for key in [
        "t_a",
        "t_r",
        "coverage",
        "beta",
        "dev_macro_f_beta",
        "tuned_at",
        "version",
    ] {
        assert!(th.get(key).is_some(), "{key}");
    }

    let (status, full) = call(
        &svc,
        Method::PUT,
        "/api/thresholds",
        Some(json!({ "coverage": 1.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{full}");
    assert_eq!(full["t_a"], full["t_r"]);
    assert_eq!(full["projected_workload"], 0.0);
    assert_eq!(full["version"], 2);

    let (_, half) = call(
        &svc,
        Method::PUT,
        "/api/thresholds",
        Some(json!({ "coverage": 0.5 })),
    )
    .await;
    let w = half["projected_workload"].as_f64().unwrap();
    assert!((w - 0.5).abs() <= 1.0 / 20.0 + 1e-12, "{w}");
    let (_, now) = call(&svc, Method::GET, "/api/thresholds", None).await;
    assert_eq!(now["t_a"], half["t_a"]);

    let (status, _) = call(
        &svc,
        Method::PUT,
        "/api/thresholds",
        Some(json!({ "coverage": 1.5 })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let auto = post_comment(&svc, "bad", 1).await;
    let audit_uri = format!("/api/items/{}/audit", auto["id"].as_str().unwrap());
    let (status, item) = call(
        &svc,
        Method::POST,
        &audit_uri,
        Some(json!({ "label": "reject", "moderator": "q" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["audit"]["label"], "reject");

    let (status, m) = call(&svc, Method::GET, "/api/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["counters"]["total"], 1);
    assert_eq!(m["counters"]["auto_reject"], 1);
    assert_eq!(m["audit"]["p_reject"], 1.0);
    assert_eq!(m["variant"], "list");

    let (status, item) = call(
        &svc,
        Method::GET,
        &format!("/api/items/{}", auto["id"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["id"], auto["id"]);
}

#[tokio::test]
async fn missing_state_maps_to_409() {
    let svc = Arc::new(ModerationService::in_memory());
    let (status, err) = call(
        &svc,
        Method::POST,
        "/api/comments",
        Some(json!({ "text": "hi" })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "no_model");
    let (status, err) = call(&svc, Method::GET, "/api/thresholds", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "no_thresholds");
    let (status, err) = call(
        &svc,
        Method::PUT,
        "/api/thresholds",
        Some(json!({ "coverage": 0.5 })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "no_dev_set");
    let (status, m) = call(&svc, Method::GET, "/api/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["counters"]["total"], 0);
    assert_eq!(m["audit"]["p_accept"], 1.0);

    let (status, err) = call(
        &svc,
        Method::POST,
        "/api/comments",
        Some(json!({ "txt": "hi" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "bad_request");
    let (status, err) = call(&svc, Method::GET, "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "not_found");
}

#[tokio::test]
async fn attention_weights_are_returned_per_token() {
    let docs = vec![vec!["you".to_string(), "idiot".to_string()]];
    let vocab = Vocabulary::build(&docs, 1).unwrap();
    let cfg = ModelConfig {
        d: 6,
        m: 5,
        r: 4,
        l: 3,
        ..ModelConfig::new(Variant::ARnn, vocab.rows())
    };
    let model = Model::init(cfg, None, &mut seeded(4)).unwrap();
    let svc = ModerationService::in_memory();
    svc.set_scorer(Scorer::neural(model, vocab));
    svc.set_thresholds(Thresholds::fixed(0.5)).unwrap();
    let svc = Arc::new(svc);
    let body = post_comment(&svc, "You, idiot", 0).await;
    let att = body["attention"].as_array().unwrap();
    let tokens: Vec<&str> = att.iter().map(|t| t["token"].as_str().unwrap()).collect();
    assert_eq!(tokens, ["you", ",", "idiot"]);
    let sum: f64 = att.iter().map(|t| t["weight"].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);
}
