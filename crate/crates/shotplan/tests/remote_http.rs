//! Exercises [`shotplan::model::remote::RemoteModel`] against a scripted
//! HTTP server: reply parsing, retry-with-backoff on retryable statuses, and
//! the no-retry path for client errors.
//!
//! Tests that set the auth environment variable share [`ENV_LOCK`] because
//! the process environment is global state.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Mutex;
use std::thread::JoinHandle;

use shotplan::model::remote::{RemoteModel, RemoteModelConfig};
use shotplan::model::{GeneralistModel, ModelError};
use shotplan::prompt::{PredictedLabel, PromptSpec};

static ENV_LOCK: Mutex<()> = Mutex::new(());

const AUTH_VAR: &str = "SHOTPLAN_REMOTE_TEST_TOKEN";

/// Serves one scripted `(status, body)` reply per accepted connection and
/// returns the raw request bodies once every reply has been consumed.
fn scripted_server(replies: Vec<(u16, String)>) -> (SocketAddr, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut requests = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            requests.push(respond(stream, status, &body));
        }
        requests
    });
    (addr, handle)
}

fn respond(stream: TcpStream, status: u16, body: &str) -> String {
    let mut reader = BufReader::new(stream);
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap();
        }
    }
    let mut request = vec![0u8; content_length];
    reader.read_exact(&mut request).unwrap();

    let reply = format!(
        "HTTP/1.1 {status} Scripted\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    reader.get_ref().write_all(reply.as_bytes()).unwrap();
    String::from_utf8(request).unwrap()
}

fn config(addr: SocketAddr, max_retries: u32) -> RemoteModelConfig {
    RemoteModelConfig {
        endpoint: format!("http://{addr}/v1/completions"),
        model: "scripted".into(),
        auth_env: AUTH_VAR.into(),
        timeout_secs: 5,
        max_retries,
        max_concurrency: 1,
        temperature: 0.0,
        max_tokens: 16,
        max_context_tokens: 4096,
        requests_per_second: 0.0,
        initial_backoff_ms: 1,
    }
}

fn prompt() -> PromptSpec {
    PromptSpec {
        sample_id: "s0".into(),
        base: "Input: it was great\nAnswer:".into(),
        text: "Input: it was great\nAnswer:".into(),
        demos: vec![],
        base_tokens: 6,
        total_tokens: 6,
    }
}

fn labels() -> Vec<String> {
    vec!["negative".into(), "positive".into()]
}

#[test]
fn reply_text_is_parsed_into_a_label_and_usage() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::set_var(AUTH_VAR, "sk-test");
    let body = r#"{"choices":[{"text":" Positive, clearly."}],"usage":{"total_tokens":42}}"#;
    let (addr, server) = scripted_server(vec![(200, body.into())]);

    let model = RemoteModel::new(config(addr, 0), &labels()).unwrap();
    let output = model.predict(&prompt(), 7).unwrap();
    assert_eq!(output.predicted_label, PredictedLabel::Label("positive".into()));
    assert_eq!(output.usage_tokens, 42);

    let requests = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(sent["model"], "scripted");
    assert_eq!(sent["prompt"], "Input: it was great\nAnswer:");
    assert_eq!(sent["seed"], 7);
}

#[test]
fn chat_shaped_replies_and_parse_failures_are_handled() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::set_var(AUTH_VAR, "sk-test");
    let chat = r#"{"choices":[{"message":{"content":"negative"}}]}"#;
    let noise = r#"{"choices":[{"text":"no idea"}],"usage":{"total_tokens":3}}"#;
    let (addr, server) = scripted_server(vec![(200, chat.into()), (200, noise.into())]);

    let model = RemoteModel::new(config(addr, 0), &labels()).unwrap();
    let chat_output = model.predict(&prompt(), 0).unwrap();
    assert_eq!(chat_output.predicted_label, PredictedLabel::Label("negative".into()));
    // No usage block: fall back to the prompt's own token count.
    assert_eq!(chat_output.usage_tokens, prompt().total_tokens);

    let noise_output = model.predict(&prompt(), 1).unwrap();
    assert_eq!(noise_output.predicted_label, PredictedLabel::ParseFailure);
    server.join().unwrap();
}

#[test]
fn server_errors_are_retried_until_success() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::set_var(AUTH_VAR, "sk-test");
    let ok = r#"{"choices":[{"text":"positive"}],"usage":{"total_tokens":5}}"#;
    let (addr, server) = scripted_server(vec![
        (500, r#"{"error":"boom"}"#.into()),
        (429, r#"{"error":"slow down"}"#.into()),
        (200, ok.into()),
    ]);

    let model = RemoteModel::new(config(addr, 3), &labels()).unwrap();
    let output = model.predict(&prompt(), 0).unwrap();
    assert_eq!(output.predicted_label, PredictedLabel::Label("positive".into()));
    assert_eq!(server.join().unwrap().len(), 3, "two failures then the success");
}

#[test]
fn client_errors_are_not_retried() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::set_var(AUTH_VAR, "sk-test");
    let (addr, server) = scripted_server(vec![(400, r#"{"error":"bad request"}"#.into())]);

    let model = RemoteModel::new(config(addr, 5), &labels()).unwrap();
    let err = model.predict(&prompt(), 0).unwrap_err();
    match err {
        ModelError::Http { status, .. } => assert_eq!(status, 400),
        other => panic!("expected an HTTP error, got {other:?}"),
    }
    assert!(!err.is_retryable());
    assert_eq!(server.join().unwrap().len(), 1, "no second attempt");
}

#[test]
fn unusable_replies_surface_as_bad_reply() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::set_var(AUTH_VAR, "sk-test");
    let (addr, server) = scripted_server(vec![
        (200, r#"{"choices":[]}"#.into()),
        (200, "not json at all".into()),
    ]);

    let model = RemoteModel::new(config(addr, 0), &labels()).unwrap();
    assert!(matches!(model.predict(&prompt(), 0), Err(ModelError::BadReply(_))));
    assert!(matches!(model.predict(&prompt(), 1), Err(ModelError::BadReply(_))));
    server.join().unwrap();
}

#[test]
fn oversized_prompts_never_reach_the_wire() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::set_var(AUTH_VAR, "sk-test");
    // No server: a context overflow must fail before any connection.
    let mut cfg = config("127.0.0.1:9".parse().unwrap(), 0);
    cfg.max_context_tokens = 4;

    let model = RemoteModel::new(cfg, &labels()).unwrap();
    match model.predict(&prompt(), 0).unwrap_err() {
        ModelError::ContextOverflow { tokens, max } => {
            assert_eq!((tokens, max), (6, 4));
        }
        other => panic!("expected context overflow, got {other:?}"),
    }
}

#[test]
fn missing_auth_variable_fails_at_construction() {
    let _guard = ENV_LOCK.lock().unwrap();
    std::env::remove_var(AUTH_VAR);
    match RemoteModel::new(config("127.0.0.1:9".parse().unwrap(), 0), &labels()) {
        Err(ModelError::MissingAuth { var }) => assert_eq!(var, AUTH_VAR),
        Err(other) => panic!("expected missing auth, got {other:?}"),
        Ok(_) => panic!("construction must fail without the token"),
    }
}
