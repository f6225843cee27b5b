use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zkml_core::argument::{FailureReason, DEFAULT_K};
use zkml_core::field::QuantConfig;
use zkml_core::graph::{evaluate_quantized, prepare_inputs};
use zkml_core::zoo::{MlpConfig, NanoGptConfig};
use zkml_protocol::wire::{read_message, write_message};
use zkml_protocol::{
    client_query, Arch, Client, ClientError, Input, Message, ModelBundle, Prepared, ProtocolError, Published,
    PublishedModel, Registry, Server,
};

/// Commitment of the checked-in toy nanoGPT bundle. Frozen after the first
/// generation; any change to the graph text, weights file layout,
/// initializer or commitment hashing shows up here.
const TOY_NANOGPT_DIGEST: &str = "84430e0952a02697adcb2b760de54f66e1d26d20a72b02030abd94f9bef02834";

fn mlp_bundle(id: &str, m: MlpConfig, seed: u64) -> ModelBundle {
    ModelBundle::generate(id, Arch::mlp(m), seed, QuantConfig::default()).unwrap()
}

fn publish(reg: &Registry, p: &Prepared) {
    reg.publish(&p.record(1)).unwrap();
}

fn registry(dir: &Path) -> Registry {
    Registry::open(dir.join("registry.jsonl"))
}

#[test]
fn checked_in_toy_bundle_is_reproducible() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/toy-nanogpt");
    let loaded = ModelBundle::load(&dir).unwrap();
    let fresh =
        ModelBundle::generate("toy-nanogpt", Arch::nanogpt(NanoGptConfig::toy()), 7, QuantConfig::default())
            .unwrap();
    assert_eq!(loaded.manifest, fresh.manifest);
    assert_eq!(loaded.graph_text, fresh.graph_text);
    assert_eq!(loaded.weights.to_bytes(), fresh.weights.to_bytes());
    assert_eq!(loaded.commitment().unwrap().to_hex(), TOY_NANOGPT_DIGEST);
}

#[test]
fn bundle_save_load_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let b = mlp_bundle("m", MlpConfig::toy(), 3);
    b.save(tmp.path()).unwrap();
    let back = ModelBundle::load(tmp.path()).unwrap();
    assert_eq!(back.commitment().unwrap(), b.commitment().unwrap());
    let other = mlp_bundle("m", MlpConfig::toy(), 4);
    assert_ne!(other.commitment().unwrap(), b.commitment().unwrap());
}

#[test]
fn toy_nanogpt_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let bundle =
        ModelBundle::generate("toy-nanogpt", Arch::nanogpt(NanoGptConfig::toy()), 7, QuantConfig::default())
            .unwrap();
    let model = bundle.prepare(None).unwrap();
    publish(&reg, &model);
    let server = Server::new(vec![model], &reg).unwrap().spawn("127.0.0.1:0").unwrap();
    let input = Input::Tokens((0..16).map(|i| (i * 7) % 65).collect());
    let out = client_query(server.addr(), "toy-nanogpt", &input, DEFAULT_K, &reg).unwrap();
    assert!(out.report.accepted, "{}", out.report);
    assert_eq!(out.output.len(), 16 * 65);

    // the output is the model's output
    let model = bundle.prepare(None).unwrap();
    let xs = prepare_inputs(&model.graph, &[input.to_model_input()], &model.circuit.cfg).unwrap();
    let ev = evaluate_quantized(&model.graph, &xs, &model.params, &model.circuit.cfg).unwrap();
    assert_eq!(out.raw_output, ev.outputs[0].data);
    server.stop();
}

#[test]
fn unknown_and_unpublished_models() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let a = mlp_bundle("a", MlpConfig::toy(), 1).prepare(None).unwrap();
    let b = mlp_bundle("b", MlpConfig::toy(), 2).prepare(None).unwrap();
    publish(&reg, &a);
    assert!(matches!(Server::new(vec![b], &reg), Err(ProtocolError::NotPublished(_))));

    let server = Server::new(vec![a], &reg).unwrap().spawn("127.0.0.1:0").unwrap();
    let input = Input::Values(vec![0.0; 32]);
    let err = client_query(server.addr(), "nope", &input, 30, &reg).unwrap_err();
    assert!(matches!(err, ClientError::UnknownModel(_)), "{err}");

    let mut c = Client::connect(server.addr()).unwrap();
    let req = zkml_protocol::InferenceRequest { model_id: "nope".into(), input: input.clone(), k: 30 };
    match c.request(&req) {
        Err(ClientError::Server(m)) => assert!(m.contains("unknown model"), "{m}"),
        other => panic!("{other:?}"),
    }
    let bad =
        zkml_protocol::InferenceRequest { model_id: "a".into(), input: Input::Values(vec![0.0; 3]), k: 30 };
    assert!(matches!(c.request(&bad), Err(ClientError::Server(_))));
    // connection still usable
    let rec = PublishedModel::new(reg.get("a").unwrap().unwrap()).unwrap();
    assert!(c.query(&rec, &input, 30).unwrap().report.accepted);
    server.stop();
}

#[test]
fn malformed_frames_get_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let a = mlp_bundle("a", MlpConfig::toy(), 1).prepare(None).unwrap();
    publish(&reg, &a);
    let server = Server::new(vec![a], &reg).unwrap().spawn("127.0.0.1:0").unwrap();
    let mut s = TcpStream::connect(server.addr()).unwrap();
    s.write_all(&[0, 0, 0, 3, b'x', b'y', b'z']).unwrap();
    match read_message(&mut s).unwrap() {
        Some(Message::Error { message }) => assert!(message.starts_with("malformed request"), "{message}"),
        other => panic!("{other:?}"),
    }
    let mut s = TcpStream::connect(server.addr()).unwrap();
    write_message(&mut s, &Message::Error { message: "hi".into() }).unwrap();
    assert!(matches!(read_message(&mut s).unwrap(), Some(Message::Error { .. })));
    server.stop();
}

#[test]
fn swapped_model_is_caught() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let honest = mlp_bundle("m", MlpConfig::toy(), 1).prepare(None).unwrap();
    let cheap = mlp_bundle("m", MlpConfig { n_layers: 1, width: 32 }, 1).prepare(None).unwrap();
    publish(&reg, &honest);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<Input> = (0..10).map(|_| honest.random_input(&mut rng)).collect();
    let server = Server::new(vec![honest], &reg).unwrap().with_swap(cheap).spawn("127.0.0.1:0").unwrap();
    let model = PublishedModel::new(reg.get("m").unwrap().unwrap()).unwrap();
    let mut c = Client::connect(server.addr()).unwrap();
    for input in inputs {
        let out = c.query(&model, &input, DEFAULT_K).unwrap();
        assert!(!out.report.accepted);
        assert_eq!(out.report.failure_reason, FailureReason::CommitmentMismatch, "{}", out.report);
    }
    server.stop();
}

#[test]
fn registry_is_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    assert!(reg.records().unwrap().is_empty());
    let a = mlp_bundle("a", MlpConfig::toy(), 1).prepare(None).unwrap();
    let a2 = mlp_bundle("a", MlpConfig::toy(), 2).prepare(None).unwrap();
    assert_eq!(reg.publish(&a.record(10)).unwrap(), Published::New);
    assert_eq!(reg.publish(&a.record(20)).unwrap(), Published::AlreadyPresent);
    assert!(matches!(reg.publish(&a2.record(30)), Err(ProtocolError::Immutable(_))));
    // same weights, different geometry is a different publication too
    let a_capped = mlp_bundle("a", MlpConfig::toy(), 1).prepare(Some(1024)).unwrap();
    assert!(matches!(reg.publish(&a_capped.record(40)), Err(ProtocolError::Immutable(_))));
    let recs = Registry::open(reg.path()).records().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].published_at, 10);
    assert_eq!(recs[0].digest, a.mc.to_hex());

    let mut tampered = a.record(5);
    tampered.model_id = "x".into();
    tampered.fixed_root = "00".repeat(32);
    assert!(matches!(reg.publish(&tampered), Err(ProtocolError::Registry(_))));
}

#[test]
fn concurrent_publishers() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let rec = mlp_bundle("x", MlpConfig { n_layers: 1, width: 4 }, 1).prepare(None).unwrap().record(1);
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let reg = reg.clone();
            let mut r = rec.clone();
            r.model_id = format!("m{}", i % 4);
            thread::spawn(move || reg.publish(&r).unwrap())
        })
        .collect();
    let outcomes: Vec<Published> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(outcomes.iter().filter(|&&p| p == Published::New).count(), 4);
    assert_eq!(reg.records().unwrap().len(), 4);
}

/// Relays one client connection to `upstream`, keeping every byte.
fn recording_proxy(upstream: SocketAddr) -> (SocketAddr, Arc<Mutex<Vec<u8>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let log2 = log.clone();
    thread::spawn(move || {
        for conn in listener.incoming() {
            let down = conn.unwrap();
            let up = TcpStream::connect(upstream).unwrap();
            for (mut from, mut to) in [(down.try_clone().unwrap(), up.try_clone().unwrap()), (up, down)] {
                let log = log2.clone();
                thread::spawn(move || {
                    let mut buf = [0u8; 65536];
                    loop {
                        match from.read(&mut buf) {
                            Ok(0) | Err(_) => {
                                let _ = to.shutdown(std::net::Shutdown::Write);
                                return;
                            }
                            Ok(n) => {
                                log.lock().unwrap().extend_from_slice(&buf[..n]);
                                if to.write_all(&buf[..n]).is_err() {
                                    return;
                                }
                            }
                        }
                    }
                });
            }
        }
    });
    (addr, log)
}

#[test]
fn no_weights_on_the_wire() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let bundle = mlp_bundle("m", MlpConfig::toy(), 1);
    let model = bundle.prepare(None).unwrap();
    publish(&reg, &model);
    let server = Server::new(vec![model], &reg).unwrap().spawn("127.0.0.1:0").unwrap();
    let (proxy, log) = recording_proxy(server.addr());
    let published = PublishedModel::new(reg.get("m").unwrap().unwrap()).unwrap();
    let mut c = Client::connect(proxy).unwrap();
    let mut proofs = Vec::new();
    for i in 0..5 {
        let out = c.query(&published, &Input::Values(vec![0.1 * i as f64; 32]), DEFAULT_K).unwrap();
        assert!(out.report.accepted);
        proofs.push(out.proof.to_bytes());
    }
    drop(c);
    thread::sleep(Duration::from_millis(100));
    let traffic = log.lock().unwrap().clone();
    assert!(traffic.len() > 10_000);

    const W: usize = 16;
    let weights = bundle.weights.to_bytes();
    let windows: HashSet<&[u8]> = weights.windows(W).collect();
    let leaks = |hay: &[u8]| hay.windows(W).filter(|w| windows.contains(w)).count();
    assert_eq!(leaks(&traffic), 0);
    for p in &proofs {
        assert_eq!(leaks(p), 0);
    }
    // the registry record is public too
    let rec = serde_json::to_vec(&reg.get("m").unwrap().unwrap()).unwrap();
    assert_eq!(leaks(&rec), 0);
    assert_eq!(leaks(&B64.decode(&reg.get("m").unwrap().unwrap().description).unwrap()), 0);
    server.stop();
}

#[test]
fn soak_twenty_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let model = mlp_bundle("m", MlpConfig::toy(), 1).prepare(None).unwrap();
    publish(&reg, &model);
    let server = Server::new(vec![model], &reg).unwrap().spawn("127.0.0.1:0").unwrap();
    let published = PublishedModel::new(reg.get("m").unwrap().unwrap()).unwrap();
    let mut c = Client::connect(server.addr()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut times = Vec::new();
    for _ in 0..20 {
        let input = zkml_protocol::bundle::random_input(&published_graph(&reg), &mut rng);
        let out = c.query(&published, &input, DEFAULT_K).unwrap();
        assert!(out.report.accepted, "{}", out.report);
        times.push(out.verify_time);
    }
    // No drift across the session: late requests verify as fast as early ones.
    let med = |v: &[std::time::Duration]| {
        let mut v = v.to_vec();
        v.sort();
        v[v.len() / 2]
    };
    let (early, late) = (med(&times[..10]), med(&times[10..]));
    assert!(late <= early * 2 && early <= late * 2, "{times:?}");
    server.stop();
}

fn published_graph(reg: &Registry) -> zkml_core::graph::Graph {
    let rec = reg.get("m").unwrap().unwrap();
    zkml_core::graph::reduce(&zkml_core::graph::parse_graph(&rec.graph).unwrap()).unwrap()
}

#[test]
fn damaged_responses_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = registry(tmp.path());
    let model = mlp_bundle("m", MlpConfig::toy(), 1).prepare(None).unwrap();
    publish(&reg, &model);
    let server = Server::new(vec![model], &reg).unwrap().spawn("127.0.0.1:0").unwrap();
    let published = PublishedModel::new(reg.get("m").unwrap().unwrap()).unwrap();
    let mut c = Client::connect(server.addr()).unwrap();
    let req = zkml_protocol::InferenceRequest {
        model_id: "m".into(),
        input: Input::Values(vec![0.5; 32]),
        k: DEFAULT_K,
    };
    let resp = c.request(&req).unwrap();
    assert!(published.check(&req, &resp).unwrap().report.accepted);

    let bytes = resp.proof_bytes().unwrap();
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        let mut r = resp.clone();
        r.proof = B64.encode(&bytes[..cut]);
        assert!(matches!(published.check(&req, &r), Err(ClientError::MalformedProof(_))));
    }
    let mut r = resp.clone();
    r.proof.truncate(r.proof.len() - 3);
    assert!(matches!(published.check(&req, &r), Err(ClientError::MalformedProof(_))));

    // the server's answer to a different question
    let mut r = resp.clone();
    r.output[0] += 1;
    assert_eq!(published.check(&req, &r).unwrap().report.failure_reason, FailureReason::TranscriptMismatch);
    let other = zkml_protocol::InferenceRequest { input: Input::Values(vec![0.25; 32]), ..req.clone() };
    assert_eq!(
        published.check(&other, &resp).unwrap().report.failure_reason,
        FailureReason::TranscriptMismatch
    );
    let mut r = resp.clone();
    r.model_id = "n".into();
    assert_eq!(published.check(&req, &r).unwrap().report.failure_reason, FailureReason::CommitmentMismatch);
    // fewer samples than asked for
    let more = zkml_protocol::InferenceRequest { k: DEFAULT_K + 1, ..req.clone() };
    assert_eq!(
        published.check(&more, &resp).unwrap().report.failure_reason,
        FailureReason::TranscriptMismatch
    );
    server.stop();
}
