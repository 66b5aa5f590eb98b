mod common;

use std::sync::atomic::Ordering;
use std::time::Duration;

use common::{fixture_corpus, synthetic_corpus, Instrumented, StubServer};
use drivelm_core::augment::keyobj_question;
use drivelm_core::depth::DepthIndex;
use drivelm_core::metrics::{HttpJudge, JudgeClient, JudgeError};
use drivelm_core::orchestrator::{
    read_predictions, run_inference, Backend, BackendError, BackendRequest, HttpBackend, ImageTransport,
    InferenceConfig, MockEchoBackend, RetryPolicy,
};
use drivelm_core::prompting::compose_prompt;

fn fast_config(system_id: &str) -> InferenceConfig {
    InferenceConfig {
        system_id: system_id.into(),
        retry: RetryPolicy {
            attempts: 3,
            base_delay_ms: 0,
            max_delay_ms: 0,
        },
        ..Default::default()
    }
}

fn request(prompt: &str) -> BackendRequest {
    BackendRequest {
        prompt: prompt.into(),
        image_path: Some("samples/CAM_FRONT/a.jpg".into()),
        image: None,
        max_new_tokens: 32,
        temperature: 0.0,
        system_id: "s".into(),
    }
}

#[test]
fn in_flight_requests_never_exceed_concurrency() {
    let corpus = synthetic_corpus(8, 5);
    let backend = Instrumented::with_delay(5);
    let config = InferenceConfig {
        concurrency: 4,
        ..fast_config("s")
    };
    let out = run_inference(&corpus, &backend, &DepthIndex::default(), &config, None).unwrap();
    assert_eq!(out.report.answered, 40);
    let peak = backend.max_in_flight.load(Ordering::SeqCst);
    assert!(peak <= 4, "peak in flight {peak}");
    assert!(peak >= 1);
}

#[test]
fn stage1_description_is_computed_once_per_object() {
    // 5 questions per frame all need c1; one description call per frame
    let corpus = synthetic_corpus(3, 5);
    let backend = Instrumented::with_delay(2);
    let out = run_inference(&corpus, &backend, &DepthIndex::default(), &fast_config("s"), None).unwrap();
    let frame = &corpus.frames[0];
    let stage1 = compose_prompt("", "", &keyobj_question(&frame.key_objects.values().next().unwrap().tag), None);
    let prompts = backend.prompts.lock().unwrap();
    assert_eq!(prompts.iter().filter(|p| **p == stage1).count(), 3);
    assert_eq!(out.report.stage1_calls, 3);
    assert_eq!(backend.calls(), 3 + 15);
}

#[test]
fn resume_skips_answered_questions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let corpus = fixture_corpus();
    let first = Instrumented::default();
    let out = run_inference(&corpus, &first, &DepthIndex::default(), &fast_config("s"), Some(&path)).unwrap();
    assert_eq!(out.report.answered, corpus.question_count());
    let bytes = std::fs::read(&path).unwrap();

    let second = Instrumented::default();
    let again = run_inference(&corpus, &second, &DepthIndex::default(), &fast_config("s"), Some(&path)).unwrap();
    assert_eq!(second.calls(), 0);
    assert_eq!(again.report.resumed, corpus.question_count());
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn interrupted_file_resumes_remaining_questions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let corpus = fixture_corpus();
    run_inference(&corpus, &MockEchoBackend, &DepthIndex::default(), &fast_config("s"), Some(&path)).unwrap();
    let complete = std::fs::read_to_string(&path).unwrap();
    // keep three records and a torn fourth line
    let lines: Vec<&str> = complete.lines().collect();
    std::fs::write(&path, format!("{}\n{}\n{}\n{}", lines[0], lines[1], lines[2], &lines[3][..10])).unwrap();

    let backend = Instrumented::default();
    let out = run_inference(&corpus, &backend, &DepthIndex::default(), &fast_config("s"), Some(&path)).unwrap();
    assert_eq!(out.report.resumed, 3);
    assert_eq!(out.report.answered, corpus.question_count() - 3);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), complete);
}

#[test]
fn transient_failures_are_retried() {
    let corpus = synthetic_corpus(1, 2);
    let backend = Instrumented {
        fail_first: 2,
        ..Default::default()
    };
    let config = InferenceConfig {
        concurrency: 1,
        ..fast_config("s")
    };
    let out = run_inference(&corpus, &backend, &DepthIndex::default(), &config, None).unwrap();
    assert!(out.report.failed.is_empty());
    assert_eq!(out.report.answered, 2);
    // 1 description + 2 answers, plus the two failed attempts
    assert_eq!(backend.calls(), 5);
}

#[test]
fn failed_questions_are_reported_not_written_and_retried_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let corpus = synthetic_corpus(1, 3);
    let broken = Instrumented {
        fail_on: Some("in step 1?".into()),
        ..Default::default()
    };
    let out = run_inference(&corpus, &broken, &DepthIndex::default(), &fast_config("s"), Some(&path)).unwrap();
    assert_eq!(out.report.failed.len(), 1);
    assert!(out.report.failed[0].error.contains("model crashed"));
    assert!((out.report.error_fraction() - 1.0 / 3.0).abs() < 1e-12);
    let written = read_predictions(&path).unwrap();
    assert_eq!(written.len(), 2);

    let healthy = Instrumented::default();
    let out = run_inference(&corpus, &healthy, &DepthIndex::default(), &fast_config("s"), Some(&path)).unwrap();
    assert_eq!(out.report.resumed, 2);
    assert_eq!(out.report.answered, 1);
    assert_eq!(read_predictions(&path).unwrap().len(), 3);
}

#[test]
fn predictions_from_another_system_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    let corpus = fixture_corpus();
    run_inference(&corpus, &MockEchoBackend, &DepthIndex::default(), &fast_config("a"), Some(&path)).unwrap();
    assert!(run_inference(&corpus, &MockEchoBackend, &DepthIndex::default(), &fast_config("b"), Some(&path)).is_err());
}

#[test]
fn http_backend_speaks_the_wire_contract() {
    let server = StubServer::echo();
    let backend = HttpBackend::new(&server.base_url, Duration::from_secs(5));
    let req = request("USER: <image> Is the road clear? ASSISTANT:");
    let resp = backend.generate(&req).unwrap();
    assert_eq!(resp, MockEchoBackend.generate(&req).unwrap());

    let sent = server.requests.lock().unwrap();
    assert_eq!(sent[0].method, "POST");
    assert_eq!(sent[0].path, "/v1/generate");
    let body: serde_json::Value = serde_json::from_str(&sent[0].body).unwrap();
    for field in ["prompt", "image_path", "max_new_tokens", "temperature", "system_id"] {
        assert!(body.get(field).is_some(), "missing {field}");
    }
    assert!(body.get("image").is_none());
}

#[test]
fn http_backend_reports_error_bodies() {
    let server = StubServer::start(|_| (503, r#"{"error":"overloaded"}"#.into()));
    let backend = HttpBackend::new(&server.base_url, Duration::from_secs(5));
    assert_eq!(
        backend.generate(&request("x")),
        Err(BackendError::Status {
            status: 503,
            message: "overloaded".into()
        })
    );

    let server = StubServer::start(|_| (200, "not json".into()));
    let backend = HttpBackend::new(&server.base_url, Duration::from_secs(5));
    assert!(matches!(backend.generate(&request("x")), Err(BackendError::Malformed(_))));
}

#[test]
fn http_backend_rejects_invalid_requests_locally() {
    let server = StubServer::echo();
    let backend = HttpBackend::new(&server.base_url, Duration::from_secs(5));
    let mut r = request("x");
    r.max_new_tokens = 0;
    assert!(matches!(backend.generate(&r), Err(BackendError::InvalidRequest(_))));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn unreachable_backend_is_a_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(backend.generate(&request("x")), Err(BackendError::Transport(_))));
}

#[test]
fn base64_transport_inlines_image_bytes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("samples/CAM_FRONT")).unwrap();
    std::fs::write(dir.path().join("samples/CAM_FRONT/a.jpg"), b"\xff\xd8jpeg").unwrap();
    let server = StubServer::echo();
    let backend = HttpBackend::new(&server.base_url, Duration::from_secs(5))
        .with_image_transport(ImageTransport::Base64, Some(dir.path().to_path_buf()));
    backend.generate(&request("USER: <image> Q? ASSISTANT:")).unwrap();
    let sent = server.requests.lock().unwrap();
    let body: serde_json::Value = serde_json::from_str(&sent[0].body).unwrap();
    assert_eq!(body["image"], "/9hqcGVn");
    assert!(body.get("image_path").is_none());
}

#[test]
fn inference_over_http_matches_in_process_mock() {
    let server = StubServer::echo();
    let corpus = fixture_corpus();
    let http = HttpBackend::new(&server.base_url, Duration::from_secs(5));
    let over_wire = run_inference(&corpus, &http, &DepthIndex::default(), &fast_config("s"), None).unwrap();
    let local = run_inference(&corpus, &MockEchoBackend, &DepthIndex::default(), &fast_config("s"), None).unwrap();
    assert_eq!(over_wire.run.records(), local.run.records());
}

#[test]
fn http_judge_contract() {
    let server = StubServer::start(|req| {
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        let prompt = body["prompt"].as_str().unwrap();
        let score = if prompt.contains("Answer: yes") { 100.0 } else { 20.0 };
        (200, serde_json::json!({ "score": score }).to_string())
    });
    let judge = HttpJudge::new(&server.base_url, Duration::from_secs(5));
    assert_eq!(judge.judge("Is it safe?", "yes", "yes").unwrap(), 100.0);
    assert_eq!(judge.judge("Is it safe?", "yes", "no").unwrap(), 20.0);
    assert!(!judge.synthetic());

    let bad = StubServer::start(|_| (200, r#"{"score": 140}"#.into()));
    let judge = HttpJudge::new(&bad.base_url, Duration::from_secs(5));
    assert_eq!(judge.judge("q", "r", "p"), Err(JudgeError::OutOfRange(140.0)));
}
