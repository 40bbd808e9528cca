use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

use super::*;
use crate::extract::{Modality, ReferenceExtractor};
use crate::fixtures;

/// Answers one POST with `body`, handing back what the client sent.
fn serve_once(status: u16, body: &str) -> (String, JoinHandle<serde_json::Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let body = body.to_string();
    let h = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream);
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line.trim().is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut req = vec![0; len];
        reader.read_exact(&mut req).unwrap();
        let mut stream = reader.into_inner();
        write!(
            stream,
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        serde_json::from_slice(&req).unwrap()
    });
    (url, h)
}

#[test]
fn embedder_posts_texts() {
    let (url, h) = serve_once(200, r#"{"embeddings":[[0.6,0.8]]}"#);
    let e = HttpEmbedder::new(url, 2);
    let v = crate::vector::embed_text("hello", &e).unwrap();
    assert_eq!(v, vec![0.6, 0.8]);
    assert_eq!(h.join().unwrap(), serde_json::json!({"texts": ["hello"]}));
}

#[test]
fn embedder_rejects_short_batches() {
    let (url, h) = serve_once(200, r#"{"embeddings":[]}"#);
    let err = HttpEmbedder::new(url, 2).embed_batch(&["a"]).unwrap_err();
    assert!(err.to_string().contains("got 0"), "{err}");
    h.join().unwrap();
}

#[test]
fn extractor_round_trips_triples() {
    let rec = fixtures::scenario_one().remove(1);
    let triples = ReferenceExtractor.extract(&rec).unwrap();
    let body = serde_json::json!({ "triples": triples }).to_string();
    let (url, h) = serve_once(200, &body);
    assert_eq!(HttpExtractor::new(url).extract(&rec).unwrap(), triples);
    let sent = h.join().unwrap();
    assert_eq!(sent["modality"], serde_json::json!(Modality::Image));
    assert_eq!(sent["id"], serde_json::json!(rec.id));
}

#[test]
fn captioner_sends_base64() {
    let (url, h) = serve_once(200, r#"{"caption":"a cat"}"#);
    let img = ImageInput { bytes: b"hi!", path: None };
    assert_eq!(HttpCaptioner::new(url).caption(&img).unwrap(), "a cat");
    assert_eq!(h.join().unwrap()["image_base64"], "aGkh");
}

#[test]
fn completion_and_errors() {
    let (url, h) = serve_once(200, r#"{"text":"yes"}"#);
    assert_eq!(HttpCompletion::new(url).complete("ctx", "q?").unwrap(), "yes");
    assert_eq!(h.join().unwrap(), serde_json::json!({"context": "ctx", "question": "q?"}));

    let (url, h) = serve_once(500, "{}");
    let err = HttpCompletion::new(url).complete("c", "q").unwrap_err();
    assert!(err.contains("500"), "{err}");
    h.join().unwrap();
}

#[test]
fn judge_scores_are_bounded() {
    let (url, h) = serve_once(200, r#"{"score":4}"#);
    let gold = vec!["95 EUR".to_string()];
    assert_eq!(HttpJudge::new(url).score("q", &gold, "a").unwrap(), 4);
    assert_eq!(h.join().unwrap()["gold"], serde_json::json!(["95 EUR"]));

    let (url, h) = serve_once(200, r#"{"score":9}"#);
    assert!(HttpJudge::new(url).score("q", &gold, "a").is_err());
    h.join().unwrap();
}
