//! The HTTP client for a hosted completions endpoint.
//!
//! Spins up a local scripted server so the example runs offline, then walks
//! the client through a clean reply, a retried 500, and label parsing. With
//! a real endpoint the only changes are the URL, the model name, and the
//! token in the auth environment variable.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use shotplan::model::remote::{parse_label, RemoteModel, RemoteModelConfig};
use shotplan::model::GeneralistModel;
use shotplan::prompt::{PredictedLabel, PromptSpec};

/// One scripted (status, body) reply per connection.
fn scripted_server(replies: Vec<(u16, String)>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim_end().is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
            }
            let mut request = vec![0u8; content_length];
            reader.read_exact(&mut request).unwrap();
            let reply = format!(
                "HTTP/1.1 {status} Scripted\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_ref().write_all(reply.as_bytes()).unwrap();
        }
    });
    endpoint
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint = scripted_server(vec![
        (200, r#"{"choices":[{"text":" Positive. The reviewer clearly enjoyed it."}],"usage":{"total_tokens":38}}"#.into()),
        (500, r#"{"error":"upstream hiccup"}"#.into()),
        (200, r#"{"choices":[{"message":{"content":"negative"}}]}"#.into()),
    ]);

    // The bearer token is read from the named environment variable once, at
    // construction; a missing variable fails before any request is sent.
    std::env::set_var("SHOTPLAN_EXAMPLE_TOKEN", "sk-local-example");
    let config = RemoteModelConfig {
        endpoint,
        model: "demo-completions".into(),
        auth_env: "SHOTPLAN_EXAMPLE_TOKEN".into(),
        timeout_secs: 5,
        max_retries: 2,
        max_concurrency: 1,
        temperature: 0.0,
        max_tokens: 16,
        max_context_tokens: 4096,
        requests_per_second: 0.0,
        initial_backoff_ms: 1,
    };
    let labels = vec!["negative".to_string(), "positive".to_string()];
    let model = RemoteModel::new(config, &labels)?;

    let prompt = PromptSpec {
        sample_id: "r1".into(),
        base: "Review: warm, patient, quietly funny\nSentiment:".into(),
        text: "Review: warm, patient, quietly funny\nSentiment:".into(),
        demos: vec![],
        base_tokens: 7,
        total_tokens: 7,
    };

    let output = model.predict(&prompt, 0)?;
    println!("reply text:   {:?}", output.text);
    println!("parsed label: {:?}", output.predicted_label);
    println!("usage tokens: {}", output.usage_tokens);
    assert_eq!(output.predicted_label, PredictedLabel::Label("positive".into()));

    // The second scripted reply is a 500; the client backs off and retries,
    // and the third reply (chat-shaped this time) comes back parsed.
    let retried = model.predict(&prompt, 1)?;
    println!("\nafter one retry: {:?}", retried.predicted_label);
    assert_eq!(retried.predicted_label, PredictedLabel::Label("negative".into()));

    // Label parsing scans case-insensitively and prefers the earliest, then
    // the longest, match.
    let verbose = "I would call this positive, though a negative reading exists.";
    println!("\nparse_label({verbose:?}) = {:?}", parse_label(verbose, &labels));
    Ok(())
}
