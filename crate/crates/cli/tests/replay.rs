mod common;

use std::sync::Arc;

use axum::http::StatusCode;
use common::{batch, call, config};
use dosebo::trial::{EventKind, Trial};
use dosebo_cli::service::{router, EventPage, TrialView};
use dosebo_cli::store::Store;

/// Drives one scripted trial to completion over the API, interleaving
/// reads, a duplicate submission and a recommendation issue.
async fn drive(app: &axum::Router, variant: u64) -> String {
    let (code, v) = call(app, "POST", "/v1/trials", Some(serde_json::to_value(config(variant)).unwrap())).await;
    assert_eq!(code, StatusCode::CREATED, "{v}");
    let id = v["trial_id"].as_str().unwrap().to_string();
    let reps: Vec<usize> = config(variant).strata.iter().map(|s| s.replication).collect();
    for n in 0u64.. {
        let (_, v) = call(app, "GET", &format!("/v1/trials/{id}"), None).await;
        let v: TrialView = serde_json::from_value(v).unwrap();
        // rotate across strata so the multi-stratum logs interleave
        let active: Vec<usize> = (0..v.pending.len()).filter(|&k| v.pending[k].is_some()).collect();
        let Some(&k) = active.get(n as usize % active.len().max(1)) else { break };
        let b = serde_json::to_value(batch(variant, k, v.pending[k].clone().unwrap(), reps[k], n)).unwrap();
        let uri = format!("/v1/trials/{id}/observations");
        let (code, _) = call(app, "POST", &uri, Some(b.clone())).await;
        assert_eq!(code, StatusCode::OK);
        if n % 4 == 1 {
            let (code, _) = call(app, "POST", &uri, Some(b)).await;
            assert_eq!(code, StatusCode::CONFLICT);
        }
        if n == 3 {
            let (code, _) = call(app, "POST", &format!("/v1/trials/{id}/recommendation"), Some(serde_json::json!({"samples": 50, "seed": n}))).await;
            assert_eq!(code, StatusCode::OK);
        }
    }
    id
}

async fn snapshot(app: &axum::Router, id: &str) -> (TrialView, EventPage, serde_json::Value) {
    let (_, v) = call(app, "GET", &format!("/v1/trials/{id}"), None).await;
    let (_, e) = call(app, "GET", &format!("/v1/trials/{id}/events?limit=1000"), None).await;
    let (_, g) = call(app, "GET", &format!("/v1/trials/{id}/posterior?stratum=0"), None).await;
    (serde_json::from_value(v).unwrap(), serde_json::from_value(e).unwrap(), g)
}

#[tokio::test]
async fn twenty_scripted_trajectories_replay_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut live = Vec::new();
    {
        let app = router(Arc::new(Store::open(dir.path()).unwrap()));
        for variant in 0..20 {
            let id = drive(&app, variant).await;
            live.push((id.clone(), snapshot(&app, &id).await));
        }
    }
    let app = router(Arc::new(Store::open(dir.path()).unwrap()));
    for (id, before) in &live {
        let after = snapshot(&app, id).await;
        assert_eq!(&after, before, "trial {id}");
        assert!(after.0.read_only.is_none());
        assert!(after.0.status.unwrap().complete);
        // the in-memory engine agrees with a replay of the served log
        let log: Vec<EventKind> = after.1.events.iter().map(|e| e.event.clone()).collect();
        let replayed = Trial::replay(&log).unwrap();
        assert_eq!(replayed.status(), before.0.status.clone().unwrap());
    }
}
