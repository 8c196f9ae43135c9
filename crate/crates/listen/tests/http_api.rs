use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tev_core::corpus::{synth_corpus, CorpusManifest, EventType, SynthSpec};
use tev_listen::{aggregate_der, router, ListenService, SessionReport};
use tower::ServiceExt;

struct Client {
    svc: Arc<ListenService>,
    /// Every body returned so far, for leak checks.
    seen: Vec<String>,
}

impl Client {
    fn new(svc: ListenService) -> Self {
        Self { svc: Arc::new(svc), seen: Vec::new() }
    }

    async fn call(&mut self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = router(self.svc.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn json(&mut self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body).await;
        let text = String::from_utf8(bytes).unwrap();
        self.seen.push(text.clone());
        (status, serde_json::from_str(&text).unwrap())
    }

    async fn create(&mut self, cfg: Value) -> (String, usize) {
        let (status, v) = self.json(Method::POST, "/sessions", Some(cfg)).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        (v["session_id"].as_str().unwrap().to_string(), v["n_trials"].as_u64().unwrap() as usize)
    }

    async fn answer(&mut self, id: &str, k: usize, same: bool) -> (StatusCode, Value) {
        let body = json!({ "answer": if same { "same" } else { "different" } });
        self.json(Method::POST, &format!("/sessions/{id}/trials/{k}/answer"), Some(body)).await
    }
}

fn corpus(dir: &std::path::Path, events: Vec<EventType>) -> CorpusManifest {
    let spec = SynthSpec {
        n_speakers: 4,
        utts_per_speaker_per_event: 3,
        events,
        duration_range_s: (0.2, 0.3),
        seed: 17,
        ..SynthSpec::default()
    };
    synth_corpus(&spec, dir).unwrap()
}

fn assert_no_identity_leak(manifest: &CorpusManifest, bodies: &[String]) {
    for body in bodies {
        assert!(!body.contains("is_target") && !body.contains("spk_id") && !body.contains("utt_"), "{body}");
        for r in &manifest.records {
            assert!(!body.contains(&r.spk_id), "speaker id in {body}");
            assert!(!body.contains(&r.utt_id), "utterance id in {body}");
        }
    }
}

#[tokio::test]
async fn scripted_trivial_session() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("corpus"), EventType::TRIVIAL.to_vec());
    let mut c = Client::new(ListenService::open(manifest.clone(), &dir.path().join("log.ndjson")).unwrap());
    let (id, n) = c.create(json!({ "protocol": "trivial", "seed": 3 })).await;
    assert_eq!(n, 36);

    // play every clip once, answer from a fixed key with known mistakes
    let key = c.svc.answer_key(&id).unwrap();
    let mut expected_errors = std::collections::BTreeMap::<EventType, (u64, u64)>::new();
    for k in 0..n {
        let (status, view) = c.json(Method::GET, &format!("/sessions/{id}/trials/{k}"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(view["index"], k);
        assert_eq!(view["answered"], false);
        for side in ["audio_a", "audio_b"] {
            let uri = view[side].as_str().unwrap().to_string();
            let (status, wav) = c.call(Method::GET, &uri, None).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(&wav[..4], b"RIFF");
        }
        let event: EventType = serde_json::from_value(view["event"].clone()).unwrap();
        let wrong = k % 5 == 1;
        let e = expected_errors.entry(event).or_default();
        e.0 += wrong as u64;
        e.1 += 1;
        let (status, ack) = c.answer(&id, k, key[k] ^ wrong).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ack["remaining"], n - k - 1);
    }
    let (status, _) = c.answer(&id, 4, true).await;
    assert_eq!(status, StatusCode::CONFLICT, "duplicate answer");
    let (status, _) = c.answer(&id, 36, true).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = c.json(Method::GET, "/sessions/nope/trials/0", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = c.call(Method::GET, "/audio/not-a-token", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = c.json(Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "report before finalize");
    assert_no_identity_leak(&manifest, &c.seen);

    let (status, report) = c.json(Method::POST, &format!("/sessions/{id}/finalize"), None).await;
    assert_eq!(status, StatusCode::OK);
    let report: SessionReport = serde_json::from_value(report).unwrap();
    let total_wrong: u64 = expected_errors.values().map(|e| e.0).sum();
    assert_eq!((report.overall.errors, report.overall.total), (total_wrong, 36));
    assert_eq!(report.overall.der, total_wrong as f64 / 36.0);
    for (event, (wrong, total)) in &expected_errors {
        let d = report.per_event[event];
        assert_eq!((d.errors, d.total), (*wrong, *total), "{event}");
    }
    assert!(report.trials.iter().all(|t| t.plays == [1, 1]));
    let (status, again) = c.json(Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_value::<SessionReport>(again).unwrap(), report);
}

#[tokio::test]
async fn disguise_session_counts_only_same_speaker_trials() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("corpus"), vec![EventType::Normal, EventType::Disguised]);
    let mut c = Client::new(ListenService::open(manifest.clone(), &dir.path().join("log")).unwrap());
    let (id, n) = c.create(json!({ "protocol": "disguise", "imposter_noise": 2, "seed": 1 })).await;
    assert_eq!(n, 8);
    // answer "same" everywhere: counted trials are all targets, so DER is 0
    for k in 0..n {
        c.answer(&id, k, true).await;
    }
    assert_no_identity_leak(&manifest, &c.seen);
    let (_, report) = c.json(Method::POST, &format!("/sessions/{id}/finalize"), None).await;
    let report: SessionReport = serde_json::from_value(report).unwrap();
    assert_eq!((report.overall.errors, report.overall.total), (0, 6));
    assert_eq!(report.trials.iter().filter(|t| !t.counted).count(), 2);
}

#[tokio::test]
async fn restart_recovers_answers_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("corpus"), EventType::TRIVIAL.to_vec());
    let log = dir.path().join("log.ndjson");
    let mut c = Client::new(ListenService::open(manifest.clone(), &log).unwrap());
    let (id, _) = c.create(json!({})).await;
    for k in 0..10 {
        c.answer(&id, k, true).await;
    }
    drop(c);
    let mut c = Client::new(ListenService::open(manifest, &log).unwrap());
    for k in 0..36 {
        let (_, v) = c.json(Method::GET, &format!("/sessions/{id}/trials/{k}"), None).await;
        assert_eq!(v["answered"], k < 10);
    }
    let (status, _) = c.answer(&id, 9, false).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn pooled_der_over_many_sessions_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let trivial = corpus(&dir.path().join("t"), EventType::TRIVIAL.to_vec());
    let mut c = Client::new(ListenService::open(trivial, &dir.path().join("t.log")).unwrap());
    let mut reports = Vec::new();
    for s in 0..33u64 {
        let (id, n) = c.create(json!({ "seed": s })).await;
        let key = c.svc.answer_key(&id).unwrap();
        for k in 0..n {
            c.answer(&id, k, key[k]).await;
        }
        let (_, r) = c.json(Method::POST, &format!("/sessions/{id}/finalize"), None).await;
        reports.push(serde_json::from_value::<SessionReport>(r).unwrap());
    }
    let pooled = aggregate_der(&reports);
    assert_eq!((pooled.errors(), pooled.total), (0, 1188));

    let disguise = corpus(&dir.path().join("d"), vec![EventType::Normal, EventType::Disguised]);
    let mut c = Client::new(ListenService::open(disguise, &dir.path().join("d.log")).unwrap());
    let mut reports = Vec::new();
    let mut wrong_left = 94;
    for s in 0..33u64 {
        let (id, n) = c.create(json!({ "protocol": "disguise", "imposter_noise": 2, "seed": s })).await;
        let report = c.svc.answer_key(&id).unwrap();
        for (k, &truth) in report.iter().enumerate().take(n) {
            // counted trials are exactly the targets here; imposters stay unanswered
            if !truth {
                continue;
            }
            let wrong = wrong_left > 0;
            wrong_left -= wrong as u32;
            c.answer(&id, k, !wrong).await;
        }
        let (status, r) = c.json(Method::POST, &format!("/sessions/{id}/finalize"), None).await;
        assert_eq!(status, StatusCode::OK);
        reports.push(serde_json::from_value::<SessionReport>(r).unwrap());
    }
    let pooled = aggregate_der(&reports);
    assert_eq!((pooled.errors(), pooled.total), (94, 198));
    assert_eq!(format!("{pooled}"), "47.47% (94/198)");
}
