#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dosebo::seeds::derive_seed;
use dosebo::trial::{ObservationBatch, Response, TrialConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

/// Trial configs that vary strata, replication, thresholds and stopping
/// settings with `variant`.
pub fn config(variant: u64) -> TrialConfig {
    let r = 1 + (variant % 3) as usize;
    let threshold = [0.5, 0.3, 0.8, -10.0][(variant % 4) as usize];
    let delta = if variant % 5 == 0 { 0.02 } else { 0.0 };
    let stratum = |z: Option<f64>| {
        let mut s = json!({
            "toxicity_threshold": threshold,
            "replication": r,
            "rate": 0.25,
            "efficacy_stop_threshold": delta,
        });
        if let Some(z) = z {
            s["covariates"] = json!([z]);
        }
        s
    };
    let strata = if variant % 2 == 0 {
        vec![stratum(Some(0.0)), stratum(Some(1.0))]
    } else {
        vec![stratum(None)]
    };
    let mut cfg = json!({
        "agents": 2,
        "strata": strata,
        "max_patients": 12 + 2 * (variant % 4) as usize * r,
        "fit": { "restarts": 2, "max_evals": 80, "seed": variant },
        "seed": 1000 + variant,
    });
    if variant % 3 == 2 {
        cfg["initialization"] = json!({ "kind": "random", "count": 3 });
    }
    serde_json::from_value(cfg).unwrap()
}

fn noise(seed: u64, tags: &[u64]) -> f64 {
    (derive_seed(seed, tags) >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// Deterministic cohort responses loosely shaped like a unimodal efficacy
/// surface and an increasing toxicity surface.
pub fn cohort(seed: u64, stratum: usize, dose: &[f64], n: usize, step: u64) -> Vec<Response> {
    (0..n)
        .map(|i| {
            let tags = [stratum as u64, step, i as u64];
            Response {
                efficacy: (dose[0] - 0.5).powi(2) + (dose[1] - 0.6).powi(2) - 0.3 * stratum as f64
                    + 0.3 * noise(seed, &tags),
                toxicity: 0.3 * (dose[0] + dose[1]) + 0.1 * noise(seed ^ 1, &tags),
            }
        })
        .collect()
}

pub fn batch(seed: u64, stratum: usize, dose: Vec<f64>, r: usize, step: u64) -> ObservationBatch {
    ObservationBatch {
        stratum,
        responses: cohort(seed, stratum, &dose, r, step),
        dose,
        idempotency_key: Some(format!("{seed}-{step}-{stratum}")),
    }
}
