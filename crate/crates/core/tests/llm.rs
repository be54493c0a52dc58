//! LLM retrieval against a local mock chat-completion endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use conceptdiff::conceptbank::{
    cache_path, completion_content, llm_prompt, parse_answer, retrieve_all_llm, retrieve_concepts_llm,
    LlmEndpointConfig,
};
use conceptdiff::Error;

const OK: &str = include_str!("fixtures/chat_completion_ok.json");
const NO_ANSWER: &str = include_str!("fixtures/chat_completion_no_answer.json");

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` per request, then stops accepting.
/// Returns the base URL and the recorded requests.
fn mock(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let lower = l.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(l["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { auth, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn config(url: &str, cache: &std::path::Path, token_env: &str) -> LlmEndpointConfig {
    LlmEndpointConfig {
        base_url: url.into(),
        cache_dir: cache.into(),
        token_env: token_env.into(),
        timeout_secs: 5.0,
        retries: 2,
        ..Default::default()
    }
}

#[test]
fn prompt_is_the_fixed_template() {
    let p = llm_prompt("goldfish");
    assert!(p.starts_with("You are an expert in computer vision and image analysis. Here is the task: <task>"));
    assert!(p.contains("similar appearance to goldfish. Then please give 10 short descriptions"));
    assert!(p.contains("that the goldfish has"));
    assert!(p.ends_with(r#"<answer>["$class_name", ["phrase1", "phrase2", "phrase3", "phrase4", "phrase5", "phrase6", "phrase7", "phrase8", "phrase9", "phase10"]]</answer>."#));
    assert!(!p.contains("{$class_name}"));
}

#[test]
fn fixture_responses_parse() {
    let content = completion_content(OK).unwrap();
    let (name, phrases) = parse_answer(&content).unwrap();
    assert_eq!(name, "large red circle");
    assert_eq!(phrases.len(), 10);
    assert_eq!(phrases[0], "a wide round outline with a smooth continuous edge");
    let no_answer = completion_content(NO_ANSWER).unwrap();
    match parse_answer(&no_answer) {
        Err(Error::Format { raw, .. }) => assert_eq!(raw, no_answer),
        other => panic!("{other:?}"),
    }
    assert!(matches!(completion_content("{\"choices\": []}"), Err(Error::Format { .. })));
}

#[test]
fn retrieval_sends_prompt_and_token_then_replays_cache() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = mock(vec![(200, OK.to_string())]);
    std::env::set_var("CONCEPTDIFF_TEST_TOKEN_A", "sekrit");
    let cfg = config(&url, dir.path(), "CONCEPTDIFF_TEST_TOKEN_A");
    let phrases = retrieve_concepts_llm("large red circle", &cfg).unwrap();
    assert_eq!(phrases.len(), 10);
    let req = seen.lock().unwrap()[0].clone();
    assert_eq!(req.auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(req.body["model"], "gpt-4");
    assert_eq!(req.body["messages"][0]["role"], "user");
    assert_eq!(req.body["messages"][0]["content"], llm_prompt("large red circle"));
    assert!(cache_path(&cfg, "large red circle").exists());

    // The mock is gone; the cache answers.
    let again = retrieve_concepts_llm("large red circle", &cfg).unwrap();
    assert_eq!(again, phrases);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn transport_errors_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let (url, seen) = mock(vec![(503, "{}".into()), (200, OK.to_string())]);
    let cfg = config(&url, dir.path(), "CONCEPTDIFF_TEST_TOKEN_UNSET");
    assert_eq!(retrieve_concepts_llm("large red circle", &cfg).unwrap().len(), 10);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].auth, None);
}

#[test]
fn exhausted_retries_are_transport_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (url, _) = mock(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
    let cfg = config(&url, dir.path(), "CONCEPTDIFF_TEST_TOKEN_UNSET");
    assert!(matches!(retrieve_concepts_llm("x", &cfg), Err(Error::Transport(_))));
    assert!(!cache_path(&cfg, "x").exists());
}

#[test]
fn malformed_or_short_answers_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (url, _) = mock(vec![(200, NO_ANSWER.to_string())]);
    let cfg = config(&url, dir.path(), "CONCEPTDIFF_TEST_TOKEN_UNSET");
    assert!(matches!(retrieve_concepts_llm("a", &cfg), Err(Error::Format { .. })));

    let dir = tempfile::tempdir().unwrap();
    let (url, _) = mock(vec![(200, OK.to_string())]);
    let cfg = LlmEndpointConfig { phrases: 12, ..config(&url, dir.path(), "CONCEPTDIFF_TEST_TOKEN_UNSET") };
    assert!(matches!(retrieve_concepts_llm("a", &cfg), Err(Error::Format { .. })));
}

#[test]
fn concurrent_retrieval_keeps_category_order() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = (0..5).map(|i| format!("class {i}")).collect();
    let (url, seen) = mock(vec![(200, OK.to_string()); 5]);
    let cfg = LlmEndpointConfig { max_concurrency: 3, ..config(&url, dir.path(), "CONCEPTDIFF_TEST_TOKEN_UNSET") };
    let all = retrieve_all_llm(&names, &cfg).unwrap();
    assert_eq!(all.len(), 5);
    let mut prompts: Vec<String> =
        seen.lock().unwrap().iter().map(|s| s.body["messages"][0]["content"].as_str().unwrap().to_string()).collect();
    prompts.sort();
    let mut want: Vec<String> = names.iter().map(|n| llm_prompt(n)).collect();
    want.sort();
    assert_eq!(prompts, want);
    for n in &names {
        assert!(cache_path(&cfg, n).exists());
    }
}
