//! Bridge client against the scripted peer in `fixtures/mock_bridge.py`.
//! Tests are skipped when no `python3` is on the path.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Map;
use styleshift::backend::bridge::{conformance, BridgeBackend, BridgeClient};
use styleshift::backend::{GenOptions, InfillBackend};
use styleshift::classifier::AttributeClassifier;
use styleshift::embedder::SentenceSimilarity;
use styleshift::noising::{MaskMode, MaskedVariant};
use styleshift::text::{detokenize, tokenize, LabelSet};
use styleshift::Error;

fn python() -> Option<&'static str> {
    let ok = Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success());
    ok.then_some("python3")
}

fn script() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mock_bridge.py")
}

fn client(mode: &str, timeout: Duration) -> Option<Result<BridgeClient, Error>> {
    let py = python()?;
    let mut cmd = Command::new(py);
    cmd.arg(script()).arg(mode);
    Some(BridgeClient::from_command(cmd, timeout))
}

macro_rules! connect {
    ($mode:expr) => {
        connect!($mode, Duration::from_secs(10))
    };
    ($mode:expr, $timeout:expr) => {
        match client($mode, $timeout) {
            Some(c) => c.expect("handshake"),
            None => {
                eprintln!("python3 not found; skipping");
                return;
            }
        }
    };
}

fn labels() -> LabelSet {
    LabelSet::new(["positive", "negative"]).unwrap()
}

#[test]
fn handshake_and_ping() {
    let c = connect!("normal");
    assert!(c.has_role("generator"));
    c.ping().unwrap();
    c.ping().unwrap();
}

#[test]
fn bad_handshake_is_protocol_error() {
    let Some(result) = client("badready", Duration::from_secs(10)) else {
        return;
    };
    assert!(matches!(result, Err(Error::Protocol(_))));
}

#[test]
fn generate_returns_exactly_n() {
    let c = Arc::new(connect!("normal"));
    let backend = BridgeBackend::new(c, labels());
    let variant = MaskedVariant::with_positions(&tokenize("the food was great"), &[3], MaskMode::Hard, 1.0).unwrap();
    let neg = labels().label("negative").unwrap();
    let outs = backend.generate(&variant, &neg, &GenOptions::sample(5, 3)).unwrap();
    assert_eq!(outs.len(), 5);
    let greedy = backend.generate(&variant, &neg, &GenOptions::greedy()).unwrap();
    assert_eq!(detokenize(&greedy[0]), "the food was negative");
}

#[test]
fn classifier_and_embedder_roles() {
    let c = Arc::new(connect!("normal"));
    let backend = BridgeBackend::new(c, labels());
    let p = backend.probabilities(&tokenize("positive positive")).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(p[0] > p[1]);
    let a = tokenize("the food");
    let s = backend.similarity(&a, &a).unwrap();
    assert!((s - 1.0).abs() < 1e-9);
}

#[test]
fn replies_out_of_order_reach_their_callers() {
    let c = connect!("reorder");
    let results: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = (0..2)
            .map(|i| {
                let c = &c;
                s.spawn(move || {
                    let mut fields = Map::new();
                    fields.insert("input".into(), format!("word{i}").into());
                    c.call("embed", fields)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for r in &results {
        assert!(r.is_ok(), "{r:?}");
    }
    assert_ne!(results[0].as_ref().unwrap()["vector"], results[1].as_ref().unwrap()["vector"]);
}

#[test]
fn dead_child_is_reported() {
    let c = connect!("die");
    assert!(matches!(c.ping(), Err(Error::BackendDied)));
    assert!(matches!(c.ping(), Err(Error::BackendDied)));
}

#[test]
fn malformed_reply_is_protocol_error() {
    let c = connect!("malformed");
    assert!(matches!(c.ping(), Err(Error::Protocol(_))));
    c.ping().unwrap();

    let c = connect!("noid");
    assert!(matches!(c.ping(), Err(Error::Protocol(_))));
}

#[test]
fn silent_child_times_out() {
    let c = connect!("silent", Duration::from_millis(300));
    let start = Instant::now();
    assert!(matches!(c.ping(), Err(Error::Timeout(_))));
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn remote_errors_surface() {
    let c = connect!("normal");
    match c.call("frobnicate", Map::new()) {
        Err(Error::Remote(msg)) => assert!(msg.contains("frobnicate")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn conformance_suite_passes() {
    for mode in ["normal", "nosoft"] {
        let c = connect!(mode);
        let checks = conformance(&c, &labels());
        assert_eq!(checks.len(), 8);
        for check in &checks {
            assert!(check.passed, "{mode}: {} failed: {}", check.name, check.detail);
        }
    }
}
