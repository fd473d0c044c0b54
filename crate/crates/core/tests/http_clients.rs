use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use panelguide_core::ingest::{
    ingest_image, HttpOcrClient, ImageBlob, IngestError, OcrClient, OcrConfig, OCR_KEY_HEADER,
};
use panelguide_core::llm::{complete, CompletionRequest, LiveBackend, LlmError};
use tiny_http::{Header, Response, Server};

struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

/// Serves `responder(hit_number, path) -> (status, body, extra headers)`.
fn mock<F>(responder: F) -> Mock
where
    F: Fn(usize, &str) -> (u16, String, Vec<(String, String)>) + Send + 'static,
{
    let server = Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let n = h.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let auth_ok = req
                .headers()
                .iter()
                .any(|hd| hd.field.equiv("Authorization") || hd.field.equiv(OCR_KEY_HEADER));
            b.lock().unwrap().push(body);
            let (status, text, headers) = responder(n, req.url());
            let status = if auth_ok { status } else { 400 };
            let mut resp = Response::from_string(text).with_status_code(status);
            for (k, v) in headers {
                resp.add_header(Header::from_bytes(k.as_bytes(), v.as_bytes()).unwrap());
            }
            let _ = req.respond(resp);
        }
    });
    Mock { url, hits, bodies }
}

fn chat_ok(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn backend(url: &str) -> LiveBackend {
    LiveBackend::new(url, "test-key").with_retry_backoff(Duration::from_millis(5))
}

#[test]
fn live_reply_is_returned_verbatim_and_prompt_unchanged() {
    let m = mock(|_, path| {
        assert_eq!(path, "/chat/completions");
        (200, chat_ok(" B_04, K_03\n"), vec![])
    });
    let prompt = "context\n\ninstruction \"quoted\" ünïcode\n\nreinforcement";
    let res = complete(&CompletionRequest::new(prompt), &backend(&m.url)).unwrap();
    assert_eq!(res.text, " B_04, K_03\n");
    let body: serde_json::Value =
        serde_json::from_str(&m.bodies.lock().unwrap()[0]).unwrap();
    assert_eq!(body["messages"][0]["content"].as_str().unwrap(), prompt);
    assert_eq!(body["model"], "gpt-4");
}

#[test]
fn transient_failures_are_retried_twice() {
    let m = mock(|n, _| {
        if n < 2 {
            (503, "busy".into(), vec![])
        } else {
            (200, chat_ok("H_00"), vec![])
        }
    });
    let res = complete(&CompletionRequest::new("p"), &backend(&m.url)).unwrap();
    assert_eq!(res.text, "H_00");
    assert_eq!(m.hits.load(Ordering::SeqCst), 3);

    let m = mock(|_, _| (500, "down".into(), vec![]));
    let err = complete(&CompletionRequest::new("p"), &backend(&m.url)).unwrap_err();
    assert!(matches!(err, LlmError::Status(500)));
    assert_eq!(m.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let m = mock(|_, _| (401, "nope".into(), vec![]));
    let err = complete(&CompletionRequest::new("p"), &backend(&m.url)).unwrap_err();
    assert!(matches!(err, LlmError::Auth(401)));
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_envelope() {
    let m = mock(|_, _| (200, r#"{"choices": []}"#.into(), vec![]));
    let err = complete(&CompletionRequest::new("p"), &backend(&m.url)).unwrap_err();
    assert!(matches!(err, LlmError::MalformedEnvelope(_)));
}

#[test]
fn timeout_is_reported() {
    // Accepts connections but never answers.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        let mut held = Vec::new();
        for s in listener.incoming() {
            held.push(s);
        }
    });
    let req = CompletionRequest::new("p").with_timeout(Duration::from_millis(1));
    let started = Instant::now();
    let err = complete(&req, &backend(&url)).unwrap_err();
    assert!(matches!(err, LlmError::Timeout(_)), "{err:?}");
    assert!(started.elapsed() < Duration::from_secs(5));
}

fn ocr_config(url: &str, timeout: Duration) -> OcrConfig {
    let mut c = OcrConfig::new(format!("{url}/read"), "k");
    c.poll_interval = Duration::from_millis(5);
    c.timeout = timeout;
    c
}

#[test]
fn ocr_full_round_trip() {
    let base = Arc::new(Mutex::new(String::new()));
    let b = base.clone();
    let m = mock(move |n, path| {
        let root = b.lock().unwrap().clone();
        match n {
            0 => {
                assert_eq!(path, "/read");
                (
                    202,
                    String::new(),
                    vec![("Operation-Location".into(), format!("{root}/ops/1"))],
                )
            }
            1 | 2 => (200, r#"{"status":"running"}"#.into(), vec![]),
            _ => (
                200,
                serde_json::json!({
                    "status": "succeeded",
                    "analyzeResult": {"readResults": [
                        {"lines": [{"text": "Turn H_00"}, {"text": "then unplug"}]},
                        {"lines": [{"text": "S_02."}]}
                    ]}
                })
                .to_string(),
                vec![],
            ),
        }
    });
    *base.lock().unwrap() = m.url.clone();
    let client = HttpOcrClient::new(ocr_config(&m.url, Duration::from_secs(5)));
    let image = ImageBlob {
        name: "label".into(),
        bytes: vec![0x89, b'P', b'N', b'G'],
    };
    let doc = ingest_image(&image, &client, 0).unwrap();
    assert_eq!(doc.text, "Turn H_00 then unplug S_02.");
    assert_eq!(m.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn ocr_job_failure_and_plain_line_payload() {
    let base = Arc::new(Mutex::new(String::new()));
    let b = base.clone();
    let m = mock(move |n, _| {
        let root = b.lock().unwrap().clone();
        match n % 2 {
            0 => (
                202,
                String::new(),
                vec![("Operation-Location".into(), format!("{root}/ops/{n}"))],
            ),
            _ if n == 1 => (200, r#"{"status":"failed"}"#.into(), vec![]),
            _ => (200, r#"{"status":"succeeded","lines":["a","b"]}"#.into(), vec![]),
        }
    });
    *base.lock().unwrap() = m.url.clone();
    let client = HttpOcrClient::new(ocr_config(&m.url, Duration::from_secs(5)));
    let image = ImageBlob {
        name: "x".into(),
        bytes: vec![1],
    };
    let err = client.recognize(&image).unwrap_err();
    assert_eq!(err.code(), "ocr-job-failed");
    assert_eq!(client.recognize(&image).unwrap(), vec!["a", "b"]);
}

#[test]
fn ocr_unreachable_endpoint_is_transport_error() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = HttpOcrClient::new(ocr_config(
        &format!("http://127.0.0.1:{port}"),
        Duration::from_millis(500),
    ));
    let started = Instant::now();
    let err = client
        .recognize(&ImageBlob {
            name: "x".into(),
            bytes: vec![],
        })
        .unwrap_err();
    assert!(matches!(err, IngestError::OcrTransport(_)), "{err:?}");
    assert!(started.elapsed() < Duration::from_secs(2));
}
