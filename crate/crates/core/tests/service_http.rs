use std::net::SocketAddr;

use serde_json::{json, Value};

use scgrpo::service::{router, ScoreItem, ScoreRequest, ScoreResponse, ServiceConfig};
use scgrpo::{GroundTruthSpec, Label, RewardEngine};

async fn spawn(config: ServiceConfig) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(config)).await.unwrap();
    });
    addr
}

const PERFECT_ANOMALOUS: &str =
    "<think>a dark scratch near the corner</think><location>bottom left</location><type>scratch</type><answer>Yes</answer>";
const PERFECT_NORMAL: &str = "<think>the surface looks uniform</think><answer>No</answer>";
const MALFORMED: &str = "The image looks fine, no defects.";

fn anomalous_gt() -> GroundTruthSpec {
    GroundTruthSpec {
        label: Some(Label::Anomalous),
        location: Some("bottom left".into()),
        type_label: Some("scratch".into()),
        ..Default::default()
    }
}

fn normal_gt() -> GroundTruthSpec {
    GroundTruthSpec { label: Some(Label::Normal), ..Default::default() }
}

fn item(id: &str, raw: &str, gt: GroundTruthSpec) -> ScoreItem {
    ScoreItem { id: id.into(), raw_output: raw.into(), ground_truth: gt }
}

fn examples() -> ScoreRequest {
    ScoreRequest {
        items: vec![
            item("perfect-anomalous", PERFECT_ANOMALOUS, anomalous_gt()),
            item("perfect-normal", PERFECT_NORMAL, normal_gt()),
            item("malformed", MALFORMED, normal_gt()),
        ],
        config: None,
    }
}

async fn post(addr: SocketAddr, body: &impl serde::Serialize) -> (u16, String) {
    let resp = reqwest::Client::new()
        .post(format!("http://{addr}/v1/score"))
        .json(body)
        .send()
        .await
        .unwrap();
    (resp.status().as_u16(), resp.text().await.unwrap())
}

#[tokio::test]
async fn health_reports_version_and_digest() {
    let config = ServiceConfig::default();
    let digest = config.digest();
    let addr = spawn(config).await;
    let resp = reqwest::get(format!("http://{addr}/v1/health")).await.unwrap();
    assert_eq!(resp.status(), 200);
    let v: Value = resp.json().await.unwrap();
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config_digest"], digest);
    assert_eq!(v["config"]["grid"], 3);
}

#[tokio::test]
async fn wire_results_equal_library_results() {
    let addr = spawn(ServiceConfig::default()).await;
    let (status, body) = post(addr, &examples()).await;
    assert_eq!(status, 200, "{body}");
    let resp: ScoreResponse = serde_json::from_str(&body).unwrap();
    let ids: Vec<_> = resp.results.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["perfect-anomalous", "perfect-normal", "malformed"]);

    let engine = RewardEngine::default();
    for (r, it) in resp.results.iter().zip(examples().items) {
        let gt = engine.resolve(&it.ground_truth).unwrap();
        let lib = engine.score_detailed(&it.raw_output, &gt).unwrap();
        assert_eq!(r.breakdown, lib.breakdown, "{}", r.id);
        assert_eq!(r.breakdown.total.to_bits(), lib.breakdown.total.to_bits());
    }
    let totals: Vec<f64> = resp.results.iter().map(|r| r.breakdown.total).collect();
    assert_eq!(totals, [4.0, 2.0, 0.0]);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["results"][0]["parse"]["status"], "structured");
    assert_eq!(v["results"][2]["parse"]["status"], "malformed");
    assert!(v["results"][2]["parse"]["violation"].is_string());
}

#[tokio::test]
async fn overrides_change_the_echoed_config() {
    let addr = spawn(ServiceConfig::default()).await;
    let mut req = serde_json::to_value(examples()).unwrap();
    req["config"] = json!({"mode": "accuracy_only", "grid": 5});
    let (status, body) = post(addr, &req).await;
    assert_eq!(status, 200, "{body}");
    let resp: ScoreResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(resp.config.grid, 5);
    assert_eq!(resp.results[0].breakdown.total, 1.0);
}

#[tokio::test]
async fn batch_limit_boundary() {
    let addr = spawn(ServiceConfig::default()).await;
    let batch = |n: usize| ScoreRequest {
        items: (0..n).map(|i| item(&format!("x{i}"), PERFECT_NORMAL, normal_gt())).collect(),
        config: None,
    };
    assert_eq!(post(addr, &batch(1024)).await.0, 200);
    let (status, body) = post(addr, &batch(1025)).await;
    assert_eq!(status, 413);
    assert!(body.contains("1025"), "{body}");
}

#[tokio::test]
async fn malformed_bodies_name_the_field() {
    let addr = spawn(ServiceConfig::default()).await;
    let cases = [
        (json!({"items": [{"id": "a", "raw_output": "x"}]}), "items[0]"),
        (json!({"items": [{"id": "a", "raw_output": "x", "ground_truth": {"label": "odd"}}]}), "items[0].ground_truth.label"),
        (json!({"items": []}), "items"),
        (json!({"items": [{"id": "a", "raw_output": "x", "ground_truth": {"label": "anomalous", "location": "here", "type": "hole"}}]}), "items[0].ground_truth"),
        (json!({"items": [], "extra": 1}), "extra"),
    ];
    for (body, field) in cases {
        let (status, text) = post(addr, &body).await;
        assert_eq!(status, 400, "{text}");
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(v["field"].as_str().unwrap().starts_with(field), "{field} vs {text}");
    }
    let raw = reqwest::Client::new()
        .post(format!("http://{addr}/v1/score"))
        .body("{oops")
        .send()
        .await
        .unwrap();
    assert_eq!(raw.status(), 400);
}

#[tokio::test]
async fn repeated_and_concurrent_requests_are_identical() {
    let addr = spawn(ServiceConfig::default()).await;
    let req = examples();
    let (_, first) = post(addr, &req).await;
    let (_, second) = post(addr, &req).await;
    assert_eq!(first, second);

    let handles: Vec<_> = (0..16)
        .map(|_| {
            let req = req.clone();
            tokio::spawn(async move { post(addr, &req).await })
        })
        .collect();
    for h in handles {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, 200);
        assert_eq!(body, first);
    }
}

#[tokio::test]
async fn oversized_body_is_rejected() {
    let config = ServiceConfig { max_body_bytes: 1024, ..ServiceConfig::default() };
    let addr = spawn(config).await;
    let req = ScoreRequest { items: vec![item("big", &"x".repeat(4096), normal_gt())], config: None };
    assert_eq!(post(addr, &req).await.0, 413);
}
