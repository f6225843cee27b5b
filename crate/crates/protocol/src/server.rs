use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::bundle::Prepared;
use crate::registry::Registry;
use crate::wire::{read_message, write_message, InferenceRequest, InferenceResponse, Message};
use crate::ProtocolError;

struct Job {
    req: InferenceRequest,
    reply: Sender<Message>,
}

/// Answers inference requests with output and proof. Connections are
/// handled concurrently; proving happens on one worker in arrival order.
pub struct Server {
    models: HashMap<String, Arc<Prepared>>,
    swap: Option<Arc<Prepared>>,
}

impl Server {
    /// Every model must already be published with matching content.
    pub fn new(models: Vec<Prepared>, registry: &Registry) -> Result<Self, ProtocolError> {
        let mut map = HashMap::new();
        for m in models {
            let ours = m.record(0);
            match registry.get(&m.id)? {
                Some(r)
                    if r.digest == ours.digest
                        && r.geometry == ours.geometry
                        && r.fixed_root == ours.fixed_root => {}
                Some(_) => {
                    return Err(ProtocolError::NotPublished(format!(
                        "{} (registry holds a different commitment)",
                        m.id
                    )))
                }
                None => return Err(ProtocolError::NotPublished(m.id.clone())),
            }
            map.insert(m.id.clone(), Arc::new(m));
        }
        Ok(Self { models: map, swap: None })
    }

    /// Adversarial mode for tests: every request is answered by `other`
    /// while the response keeps the requested model id.
    pub fn with_swap(mut self, other: Prepared) -> Self {
        self.swap = Some(Arc::new(other));
        self
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(|s| s.as_str())
    }

    fn handle(&self, req: &InferenceRequest) -> Message {
        let Some(model) = self.models.get(&req.model_id) else {
            return Message::Error { message: format!("unknown model: {}", req.model_id) };
        };
        if req.k == 0 {
            return Message::Error { message: "malformed request: k must be positive".into() };
        }
        let prover = self.swap.as_ref().unwrap_or(model);
        match prover.prove(&req.input, req.k) {
            Ok((wit, proof)) => {
                let output = wit.outputs.iter().flat_map(|t| t.data.iter().copied()).collect();
                Message::Response(InferenceResponse::new(&req.model_id, output, &proof))
            }
            Err(e) => Message::Error { message: format!("inference failed: {}", e) },
        }
    }

    /// Binds `addr` and serves on background threads.
    pub fn spawn(self, addr: &str) -> Result<ServerHandle, ProtocolError> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (jobs, queue) = mpsc::channel::<Job>();
        let server = Arc::new(self);
        let worker = {
            let server = server.clone();
            thread::spawn(move || work(&server, queue))
        };
        let acceptor = {
            let stop = stop.clone();
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let jobs = jobs.clone();
                    thread::spawn(move || connection(conn, jobs));
                }
            })
        };
        Ok(ServerHandle { addr: local, stop, threads: vec![acceptor, worker] })
    }
}

fn work(server: &Server, queue: Receiver<Job>) {
    for job in queue {
        let _ = job.reply.send(server.handle(&job.req));
    }
}

fn connection(conn: TcpStream, jobs: Sender<Job>) {
    let Ok(read_half) = conn.try_clone() else { return };
    let mut r = BufReader::new(read_half);
    let mut w = BufWriter::new(conn);
    loop {
        let reply = match read_message(&mut r) {
            Ok(None) => return,
            Ok(Some(Message::Request(req))) => {
                let (tx, rx) = mpsc::channel();
                if jobs.send(Job { req, reply: tx }).is_err() {
                    return;
                }
                match rx.recv() {
                    Ok(m) => m,
                    Err(_) => return,
                }
            }
            Ok(Some(_)) => Message::Error { message: "malformed request: expected a request message".into() },
            Err(e) => {
                let _ =
                    write_message(&mut w, &Message::Error { message: format!("malformed request: {}", e) });
                return;
            }
        };
        if write_message(&mut w, &reply).is_err() {
            return;
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops (which, outside tests, is never).
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Stops accepting connections. Open connections finish on their own.
    pub fn stop(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}
