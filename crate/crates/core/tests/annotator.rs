use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use image::{Rgb, RgbImage};
use realness_core::annotator::{
    AnnotationCache, Annotator, HttpProvider, HttpProviderConfig, ImagePayload, PromptTemplate,
    RetryPolicy, StubProvider, StubResponses, DEFAULT_PROMPT,
};
use realness_core::dataset::{DatasetManifest, RealnessRecord, Verdict};
use realness_core::Error;

fn write_images(dir: &Path, n: usize) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let p = dir.join(format!("img{i}.png"));
            RgbImage::from_pixel(12, 10, Rgb([i as u8 * 40, 10, 200])).save(&p).unwrap();
            p
        })
        .collect()
}

fn manifest(dir: &Path, n: usize) -> DatasetManifest {
    write_images(dir, n);
    let records = (0..n)
        .map(|i| RealnessRecord::new(format!("r{i}"), format!("img{i}.png"), 1.0 + i as f64))
        .collect();
    let mut m = DatasetManifest::new(records).unwrap();
    m.base_dir = Some(dir.to_owned());
    m
}

fn sha(path: &Path) -> String {
    ImagePayload::from_file(path, None).unwrap().sha256
}

fn stub_for(dir: &Path, n: usize) -> StubResponses {
    let mut canned = StubResponses::default();
    for i in 0..n {
        let answer = match i % 3 {
            0 => "No.".to_string(),
            1 => format!("Yes. Object {i} melts into the background."),
            _ => "Somewhat. The shadows fall in two directions.".to_string(),
        };
        canned.responses.insert(sha(&dir.join(format!("img{i}.png"))), answer);
    }
    canned
}

#[test]
fn stub_annotates_every_record_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 3);
    let ann = Annotator::new(
        Box::new(StubProvider::new(stub_for(dir.path(), 3))),
        PromptTemplate::default(),
    );
    let out = ann.annotate_manifest(&m, 2, false);
    assert!(out.failures.is_empty());
    assert_eq!(out.fetched, 3);
    let recs = &out.manifest.records;
    assert_eq!(recs[0].verdict, Verdict::No);
    assert_eq!(recs[0].description, "");
    assert_eq!(recs[1].verdict, Verdict::Yes);
    assert_eq!(recs[1].description, "Object 1 melts into the background.");
    assert_eq!(recs[2].verdict, Verdict::Somewhat);
    for r in recs {
        let p = r.annotation.as_ref().unwrap();
        assert_eq!(p.provider, "stub");
        assert_eq!(p.template_version, "v1");
    }
}

#[test]
fn cache_serves_repeat_calls_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 4);

    let first = Annotator::new(
        Box::new(StubProvider::new(stub_for(dir.path(), 4))),
        PromptTemplate::default(),
    )
    .with_cache(AnnotationCache::new(cache_dir.path()));
    let a = first.annotate_manifest(&m, 3, false);
    assert_eq!(first.network_calls(), 4);

    // a provider with no answers at all proves nothing reaches it
    let second = Annotator::new(
        Box::new(StubProvider::new(StubResponses::default())),
        PromptTemplate::default(),
    )
    .with_cache(AnnotationCache::new(cache_dir.path()));
    let b = second.annotate_manifest(&m, 3, false);
    assert_eq!(second.network_calls(), 0);
    assert_eq!(b.from_cache, 4);
    assert_eq!(a.manifest.to_jsonl(), b.manifest.to_jsonl());

    let (res, cached) = second
        .annotate_image(&dir.path().join("img1.png"), false)
        .unwrap();
    assert!(cached);
    assert_eq!(res.verdict, Verdict::Yes);

    let entry = cache_dir
        .path()
        .join("stub")
        .join("v1")
        .join(format!("{}.json", sha(&dir.path().join("img0.png"))));
    assert!(entry.is_file());
}

#[test]
fn resumes_after_interruption_and_respects_force() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 3);
    let cache = AnnotationCache::new(cache_dir.path());

    // first run dies after two images
    let mut partial = stub_for(dir.path(), 3);
    partial.responses.remove(&sha(&dir.path().join("img2.png")));
    let a = Annotator::new(Box::new(StubProvider::new(partial)), PromptTemplate::default())
        .with_cache(cache.clone())
        .annotate_manifest(&m, 1, false);
    assert_eq!(a.failures.len(), 1);
    assert_eq!(a.failures[0].0, "r2");
    assert_eq!(a.manifest.records[2].verdict, Verdict::Unknown);

    let resumed = Annotator::new(
        Box::new(StubProvider::new(stub_for(dir.path(), 3))),
        PromptTemplate::default(),
    )
    .with_cache(cache.clone());
    let b = resumed.annotate_manifest(&m, 2, false);
    assert_eq!(resumed.network_calls(), 1);
    assert_eq!((b.fetched, b.from_cache), (1, 2));

    // already annotated records are skipped unless forced
    let c = resumed.annotate_manifest(&b.manifest, 2, false);
    assert_eq!(c.skipped, 3);
    assert_eq!(c.manifest.to_jsonl(), b.manifest.to_jsonl());
    let d = resumed.annotate_manifest(&b.manifest, 2, true);
    assert_eq!(d.fetched, 3);
    assert_eq!(resumed.network_calls(), 4);
}

#[test]
fn custom_template_gets_its_own_cache_namespace() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let img = write_images(dir.path(), 1).remove(0);
    let canned = StubResponses {
        default: Some("Yes. Hands have six fingers.".into()),
        ..Default::default()
    };
    let cache = AnnotationCache::new(cache_dir.path());
    let v1 = Annotator::new(Box::new(StubProvider::new(canned.clone())), PromptTemplate::default())
        .with_cache(cache.clone());
    v1.annotate_image(&img, false).unwrap();
    let v2 = Annotator::new(
        Box::new(StubProvider::new(canned)),
        PromptTemplate {
            text: "List anything odd.".into(),
            version: "v2".into(),
        },
    )
    .with_cache(cache);
    let (_, cached) = v2.annotate_image(&img, false).unwrap();
    assert!(!cached);
    assert_eq!(v2.network_calls(), 1);
}

struct MockServer {
    url: String,
    requests: Arc<Mutex<Vec<String>>>,
}

/// Serves one scripted `(delay, status, body)` reply per connection.
fn mock_server(script: Vec<(Duration, u16, String)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for (delay, status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut payload = vec![0u8; len];
            let _ = reader.read_exact(&mut payload);
            log.lock()
                .unwrap()
                .push(head + &String::from_utf8_lossy(&payload));
            std::thread::sleep(delay);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    MockServer { url, requests }
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn http_config(url: &str, key_env: &str) -> HttpProviderConfig {
    HttpProviderConfig {
        endpoint: url.into(),
        api_key_env: key_env.into(),
        retry: RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 10,
            backoff_multiplier: 2.0,
        },
        ..Default::default()
    }
}

fn scan_tree(dir: &Path, needle: &str) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            scan_tree(&p, needle);
        } else {
            let bytes = std::fs::read(&p).unwrap();
            assert!(
                !String::from_utf8_lossy(&bytes).contains(needle),
                "credential leaked into {}",
                p.display()
            );
        }
    }
}

#[test]
fn http_provider_round_trip_without_leaking_the_key() {
    const SECRET: &str = "sk-test-5f3c9a1e7d";
    std::env::set_var("REALNESS_TEST_KEY_OK", SECRET);
    let server = mock_server(vec![(
        Duration::ZERO,
        200,
        completion("Somewhat. The clock face has melted numerals."),
    )]);
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), 1);
    let provider = HttpProvider::new("gpt", http_config(&server.url, "REALNESS_TEST_KEY_OK")).unwrap();
    assert!(!format!("{provider:?}").contains(SECRET));
    let ann = Annotator::new(Box::new(provider), PromptTemplate::default())
        .with_cache(AnnotationCache::new(cache_dir.path()));
    let out = ann.annotate_manifest(&m, 1, false);
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    assert_eq!(out.manifest.records[0].verdict, Verdict::Somewhat);
    assert_eq!(out.manifest.records[0].description, "The clock face has melted numerals.");

    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert!(reqs[0]
        .to_ascii_lowercase()
        .contains(&format!("authorization: bearer {SECRET}")));
    let json: serde_json::Value = serde_json::from_str(&reqs[0][reqs[0].find('{').unwrap()..]).unwrap();
    assert_eq!(json["messages"][0]["content"][0]["text"], DEFAULT_PROMPT);
    assert_eq!(json["temperature"], 0.0);
    assert!(json["messages"][0]["content"][1]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));

    let manifest_path = dir.path().join("annotated.jsonl");
    out.manifest.save(&manifest_path).unwrap();
    scan_tree(cache_dir.path(), SECRET);
    scan_tree(dir.path(), SECRET);
    let config_json = serde_json::to_string(&http_config(&server.url, "REALNESS_TEST_KEY_OK")).unwrap();
    assert!(!config_json.contains(SECRET));
}

#[test]
fn http_provider_retries_server_errors() {
    std::env::set_var("REALNESS_TEST_KEY_RETRY", "k1");
    let server = mock_server(vec![
        (Duration::ZERO, 503, "{}".into()),
        (Duration::ZERO, 429, "{}".into()),
        (Duration::ZERO, 200, completion("No.")),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let img = write_images(dir.path(), 1).remove(0);
    let provider = HttpProvider::new("gpt", http_config(&server.url, "REALNESS_TEST_KEY_RETRY")).unwrap();
    let ann = Annotator::new(Box::new(provider), PromptTemplate::default());
    let (res, _) = ann.annotate_image(&img, false).unwrap();
    assert_eq!(res.verdict, Verdict::No);
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn http_provider_typed_failures() {
    let dir = tempfile::tempdir().unwrap();
    let img = write_images(dir.path(), 1).remove(0);

    std::env::set_var("REALNESS_TEST_KEY_AUTH", "bad-key-value");
    let server = mock_server(vec![(Duration::ZERO, 401, "{\"error\":\"nope\"}".into())]);
    let p = HttpProvider::new("gpt", http_config(&server.url, "REALNESS_TEST_KEY_AUTH")).unwrap();
    let err = Annotator::new(Box::new(p), PromptTemplate::default())
        .annotate_image(&img, false)
        .unwrap_err();
    assert!(matches!(err, Error::Auth { .. }), "{err}");
    assert!(!err.to_string().contains("bad-key-value"));
    assert_eq!(server.requests.lock().unwrap().len(), 1);

    std::env::set_var("REALNESS_TEST_KEY_SLOW", "k2");
    let slow = Duration::from_millis(800);
    let server = mock_server(vec![
        (slow, 200, completion("No.")),
        (slow, 200, completion("No.")),
        (slow, 200, completion("No.")),
    ]);
    let p = HttpProvider::new("gpt", http_config(&server.url, "REALNESS_TEST_KEY_SLOW"))
        .unwrap()
        .with_timeout(Duration::from_millis(150))
        .unwrap();
    let err = Annotator::new(Box::new(p), PromptTemplate::default())
        .annotate_image(&img, false)
        .unwrap_err();
    assert!(matches!(err, Error::Timeout { attempts: 3, .. }), "{err}");

    std::env::set_var("REALNESS_TEST_KEY_GARBLED", "k3");
    let server = mock_server(vec![(Duration::ZERO, 200, completion("Perhaps, hard to say."))]);
    let p = HttpProvider::new("gpt", http_config(&server.url, "REALNESS_TEST_KEY_GARBLED")).unwrap();
    let err = Annotator::new(Box::new(p), PromptTemplate::default())
        .annotate_image(&img, false)
        .unwrap_err();
    assert!(matches!(err, Error::UnparseableResponse { ref raw } if raw == "Perhaps, hard to say."));

    let err = HttpProvider::new("gpt", http_config("http://127.0.0.1:9", "REALNESS_TEST_KEY_UNSET_XYZ"))
        .unwrap_err();
    assert!(matches!(err, Error::Auth { .. }));
}
