#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

pub mod oracles;

use drivelm_core::dataset::{load_corpus, Corpus, Split};
use drivelm_core::orchestrator::{Backend, BackendError, BackendRequest, BackendResponse, MockEchoBackend};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini")
}

pub fn fixture_corpus() -> Corpus {
    load_corpus(fixture_dir().join("dataset.json"), Split::Validation).unwrap()
}

/// Copies the fixture into a fresh temporary directory.
pub fn fixture_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&fixture_dir(), dir.path());
    dir
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            if entry.file_name() != "out" {
                copy_tree(&entry.path(), &target);
            }
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Echo backend that records prompts, counts calls and tracks how many
/// requests are in flight at once. The first `fail_first` calls fail with a
/// transport error; prompts containing `fail_on` always fail.
#[derive(Default)]
pub struct Instrumented {
    pub calls: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub prompts: Mutex<Vec<String>>,
    pub delay_ms: u64,
    pub fail_first: usize,
    pub fail_on: Option<String>,
}

impl Instrumented {
    pub fn with_delay(delay_ms: u64) -> Self {
        Self {
            delay_ms,
            ..Default::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for Instrumented {
    fn generate(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(request.prompt.clone());
        thread::sleep(Duration::from_millis(self.delay_ms));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if n < self.fail_first {
            return Err(BackendError::Transport("connection reset".into()));
        }
        if let Some(marker) = &self.fail_on {
            if request.prompt.contains(marker.as_str()) {
                return Err(BackendError::Status {
                    status: 500,
                    message: "model crashed".into(),
                });
            }
        }
        MockEchoBackend.generate(request)
    }
}

pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub body: String,
}

/// Minimal HTTP/1.1 server on an ephemeral port. Each connection carries
/// one request; the handler returns a status code and a JSON body.
pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<StubRequest>>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&StubRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handler = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (log, handler) = (log.clone(), handler.clone());
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        Self { base_url, requests }
    }

    /// Serves the generation contract with the in-process echo logic.
    pub fn echo() -> Self {
        Self::start(|req| {
            if req.method != "POST" || req.path != "/v1/generate" {
                return (404, r#"{"error":"not found"}"#.into());
            }
            match serde_json::from_str::<BackendRequest>(&req.body) {
                Ok(r) => match MockEchoBackend.generate(&r) {
                    Ok(resp) => (200, serde_json::to_string(&resp).unwrap()),
                    Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
                },
                Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
            }
        })
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(
    stream: TcpStream,
    handler: &(dyn Fn(&StubRequest) -> (u16, String) + Send + Sync),
    log: &Mutex<Vec<StubRequest>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut length = 0usize;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header).unwrap_or(0) == 0 || header == "\r\n" {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let req = StubRequest {
        method,
        path,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let (status, payload) = handler(&req);
    log.lock().unwrap().push(req);
    let reason = if status == 200 { "OK" } else { "Error" };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.flush();
}

/// A corpus of `frames` frames, each with key objects c1 (front) and c2
/// (back) and `per_frame` open questions that all mention c1.
pub fn synthetic_corpus(frames: usize, per_frame: usize) -> Corpus {
    use drivelm_core::dataset::{parse_corpus, LoadOptions};
    use serde_json::json;

    let cams = ["CAM_FRONT", "CAM_FRONT_LEFT", "CAM_FRONT_RIGHT", "CAM_BACK", "CAM_BACK_LEFT", "CAM_BACK_RIGHT"];
    let mut key_frames = serde_json::Map::new();
    for f in 0..frames {
        let images: serde_json::Map<String, serde_json::Value> = cams
            .iter()
            .map(|c| (c.to_string(), json!(format!("samples/{c}/f{f}.jpg"))))
            .collect();
        let qas: Vec<_> = (0..per_frame)
            .map(|i| {
                json!({
                    "Q": format!("What should the ego vehicle do about <c1,CAM_FRONT,800.0,450.0> in step {i}?"),
                    "A": format!("Keep a safe distance in step {i}.")
                })
            })
            .collect();
        key_frames.insert(
            format!("f{f:03}"),
            json!({
                "key_object_infos": {
                    "<c1,CAM_FRONT,800.0,450.0>": {
                        "Category": "Vehicle", "Status": "Moving",
                        "Visual_description": "Red car.", "2d_bbox": [780.0, 430.0, 820.0, 470.0]
                    },
                    "<c2,CAM_BACK,300.0,600.0>": {
                        "Category": "Vehicle", "Status": "Parked",
                        "Visual_description": "Van.", "2d_bbox": [280.0, 580.0, 320.0, 620.0]
                    }
                },
                "QA": { "perception": [], "prediction": [], "planning": qas, "behavior": [] },
                "image_paths": images
            }),
        );
    }
    let doc = json!({ "scene-s": { "key_frames": key_frames } });
    parse_corpus(&serde_json::to_vec(&doc).unwrap(), Split::Validation, &LoadOptions::default()).unwrap()
}

pub fn answer(system_id: &str, question_id: &str, kind: drivelm_core::dataset::QuestionKind, text: &str) -> drivelm_core::orchestrator::Answer {
    drivelm_core::orchestrator::Answer {
        question_id: question_id.into(),
        system_id: system_id.into(),
        scene_id: "s".into(),
        frame_id: "f".into(),
        kind,
        text: text.into(),
        stage1_desc_state: None,
        latency_ms: 0,
        error: None,
    }
}

pub fn system_run(system_id: &str, answers: Vec<drivelm_core::orchestrator::Answer>) -> drivelm_core::orchestrator::SystemRun {
    drivelm_core::orchestrator::SystemRun {
        system_id: system_id.into(),
        answers: answers.into_iter().map(|a| (a.question_id.clone(), a)).collect(),
        config_snapshot: serde_json::Value::Null,
    }
}

const WORDS: [&str; 12] = [
    "the", "car", "truck", "ego", "vehicle", "slow", "down", "left", "right", "stop", "ahead", "moving",
];

pub fn random_sentence(rng: &mut impl rand::Rng, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Three systems answering `questions` questions of random kinds, plus
/// references for every question.
pub fn random_fusion_case(
    rng: &mut impl rand::Rng,
    questions: usize,
) -> (Vec<drivelm_core::orchestrator::SystemRun>, std::collections::BTreeMap<String, String>) {
    use drivelm_core::dataset::QuestionKind;
    let systems = ["sys-a", "sys-b", "sys-c"];
    let mut answers: Vec<Vec<_>> = vec![Vec::new(); 3];
    let mut references = std::collections::BTreeMap::new();
    for q in 0..questions {
        let qid = format!("q{q:04}");
        let kind = QuestionKind::ALL[rng.gen_range(0..3)];
        let reference = match kind {
            QuestionKind::MultipleChoice => ["A", "B", "C", "D"][rng.gen_range(0..4)].to_string(),
            QuestionKind::YesNo => ["Yes.", "No."][rng.gen_range(0..2)].to_string(),
            QuestionKind::Open => random_sentence(rng, 8),
        };
        for (s, out) in systems.iter().zip(answers.iter_mut()) {
            let text = match kind {
                QuestionKind::MultipleChoice => ["A", "B. Turn left.", "c", "D"][rng.gen_range(0..4)].to_string(),
                QuestionKind::YesNo => ["Yes", "no.", "yes."][rng.gen_range(0..3)].to_string(),
                QuestionKind::Open => random_sentence(rng, 8),
            };
            out.push(answer(s, &qid, kind, &text));
        }
        references.insert(qid, reference);
    }
    let runs = systems
        .iter()
        .zip(answers)
        .map(|(s, a)| system_run(s, a))
        .collect();
    (runs, references)
}

pub const GOLDEN_REPORT: &str = "golden_report.json";

/// Artifacts of one pass through the whole pipeline.
pub struct ChainOutput {
    /// Predictions file bytes, by system id.
    pub predictions: std::collections::BTreeMap<String, Vec<u8>>,
    /// The fused run's score report, without the embedded config snapshot.
    pub report: serde_json::Value,
}

/// ingest, depth-index, infer three systems over HTTP against `server`,
/// fuse and score, inside `dir` (a fixture copy).
pub fn run_chain(dir: &Path, server: &StubServer) -> ChainOutput {
    use drivelm_core::config::{BackendKind, PipelineConfig};
    use drivelm_core::pipeline::{self, InferOptions};

    let mut config = PipelineConfig::load(&dir.join("pipeline.toml")).unwrap();
    config.backend.kind = BackendKind::Http;
    config.backend.base_url = server.base_url.clone();
    pipeline::ingest(&config, false).unwrap();
    pipeline::depth_index(&config, false).unwrap();

    let mut predictions = std::collections::BTreeMap::new();
    let mut paths = Vec::new();
    for system in ["mock-a", "mock-b", "mock-c"] {
        let mut c = config.clone();
        c.backend.system_id = system.into();
        let options = InferOptions {
            backend: None,
            dump_prompts: false,
        };
        pipeline::infer(&c, options, false).unwrap();
        let path = pipeline::predictions_path(&c, system);
        predictions.insert(system.to_string(), std::fs::read(&path).unwrap());
        paths.push(path);
    }
    pipeline::fuse_runs(&config, &paths, false).unwrap();
    let fused = pipeline::predictions_path(&config, drivelm_core::fusion::FUSED_SYSTEM_ID);
    predictions.insert("fusion".into(), std::fs::read(&fused).unwrap());
    pipeline::score(&config, &fused, false, false).unwrap();

    let text = std::fs::read_to_string(pipeline::scores_path(&config, "fusion")).unwrap();
    let mut report: serde_json::Value = serde_json::from_str(&text).unwrap();
    report.as_object_mut().unwrap().remove("config");
    ChainOutput { predictions, report }
}
