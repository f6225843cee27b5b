use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use zkml_core::argument::{
    challenge_rows, transcript, verify_with_min_k, CircuitDescription, FailureReason, Proof, VerifyReport,
};
use zkml_core::field::{dequantize_fixed, encode, FieldElement};
use zkml_core::graph::{parse_graph, prepare_inputs, reduce, Graph};
use zkml_core::zoo::ModelCommitment;

use crate::registry::{CommitmentRecord, Registry};
use crate::wire::{read_message, write_message, InferenceRequest, InferenceResponse, Input, Message};
use crate::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("network: {0}")]
    Network(#[from] std::io::Error),
    #[error("server error: {0}")]
    Server(String),
    #[error("model {0:?} is not in the local registry")]
    UnknownModel(String),
    #[error("malformed proof: {0}")]
    MalformedProof(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl From<ProtocolError> for ClientError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Io(e) => ClientError::Network(e),
            other => ClientError::Protocol(other.to_string()),
        }
    }
}

/// A registry record decoded once for repeated verification.
pub struct PublishedModel {
    pub record: CommitmentRecord,
    pub desc: CircuitDescription,
    pub mc: ModelCommitment,
    graph: Graph,
}

impl PublishedModel {
    pub fn new(record: CommitmentRecord) -> Result<Self, ProtocolError> {
        let desc = record.circuit()?;
        let mc = record.commitment()?;
        let graph = reduce(&parse_graph(&record.graph)?)?;
        Ok(Self { record, desc, mc, graph })
    }

    pub fn id(&self) -> &str {
        &self.record.model_id
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Public values an honest response to `input` must carry, inputs first.
    pub fn public_inputs(&self, input: &Input) -> Result<Vec<FieldElement>, ProtocolError> {
        let xs = prepare_inputs(&self.graph, &[input.to_model_input()], &self.desc.cfg)?;
        let mut out = Vec::new();
        for t in xs {
            for v in t.data {
                out.push(encode(v)?);
            }
        }
        Ok(out)
    }

    /// Verifies `resp` as the answer to `req`: the proof itself, then that it
    /// speaks about exactly this request and this output.
    pub fn check(
        &self,
        req: &InferenceRequest,
        resp: &InferenceResponse,
    ) -> Result<QueryOutcome, ClientError> {
        let bytes = resp.proof_bytes().map_err(|e| ClientError::MalformedProof(e.to_string()))?;
        let proof = Proof::from_bytes(&bytes).map_err(|e| ClientError::MalformedProof(e.to_string()))?;
        let t = Instant::now();
        let min_k = req.k.min(self.desc.n_rows);
        let mut report = verify_with_min_k(&proof, &self.desc, &self.mc, min_k);
        if report.accepted {
            if let Err((reason, detail)) = self.binding(req, resp, &proof) {
                report = VerifyReport { accepted: false, failure_reason: reason, detail };
            }
        }
        let verify_time = t.elapsed();
        let cfg = self.desc.cfg;
        Ok(QueryOutcome {
            output: resp.output.iter().map(|&v| dequantize_fixed(v, &cfg)).collect(),
            raw_output: resp.output.clone(),
            report,
            proof_bytes: bytes.len(),
            proof,
            verify_time,
        })
    }

    fn binding(
        &self,
        req: &InferenceRequest,
        resp: &InferenceResponse,
        proof: &Proof,
    ) -> Result<(), (FailureReason, String)> {
        if resp.model_id != req.model_id {
            return Err((
                FailureReason::CommitmentMismatch,
                format!("response is for model {}, asked {}", resp.model_id, req.model_id),
            ));
        }
        let mismatch = |m: &str| (FailureReason::TranscriptMismatch, m.to_string());
        let mut io = self.public_inputs(&req.input).map_err(|e| mismatch(&e.to_string()))?;
        for &v in &resp.output {
            io.push(encode(v).map_err(|_| mismatch("output value outside the field encoding"))?);
        }
        if io != proof.public_io {
            return Err(mismatch("proof public values are not (request input, response output)"));
        }
        let k = proof.head.k as usize;
        let expect = challenge_rows(&transcript(&proof.head, &io), k, self.desc.n_rows)
            .map_err(|e| mismatch(&e.to_string()))?;
        if expect != proof.indices {
            return Err(mismatch("opened rows do not follow from the request and response"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QueryOutcome {
    /// Dequantized outputs.
    pub output: Vec<f64>,
    pub raw_output: Vec<i64>,
    pub report: VerifyReport,
    pub proof: Proof,
    pub proof_bytes: usize,
    pub verify_time: Duration,
}

/// Synchronous connection to a server.
pub struct Client {
    r: BufReader<TcpStream>,
    w: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let s = TcpStream::connect(addr)?;
        Ok(Self { r: BufReader::new(s.try_clone()?), w: BufWriter::new(s) })
    }

    /// Sends one request and returns the raw response.
    pub fn request(&mut self, req: &InferenceRequest) -> Result<InferenceResponse, ClientError> {
        write_message(&mut self.w, &Message::Request(req.clone()))?;
        match read_message(&mut self.r)? {
            Some(Message::Response(r)) => Ok(r),
            Some(Message::Error { message }) => Err(ClientError::Server(message)),
            Some(Message::Request(_)) => Err(ClientError::Protocol("server sent a request".into())),
            None => Err(ClientError::Protocol("server closed the connection".into())),
        }
    }

    pub fn query(
        &mut self,
        model: &PublishedModel,
        input: &Input,
        k: usize,
    ) -> Result<QueryOutcome, ClientError> {
        let req = InferenceRequest { model_id: model.id().into(), input: input.clone(), k };
        let resp = self.request(&req)?;
        model.check(&req, &resp)
    }
}

/// One request against `addr`, verified against the local registry.
pub fn client_query(
    addr: impl ToSocketAddrs,
    model_id: &str,
    input: &Input,
    k: usize,
    registry: &Registry,
) -> Result<QueryOutcome, ClientError> {
    let rec = registry.get(model_id)?.ok_or_else(|| ClientError::UnknownModel(model_id.into()))?;
    let model = PublishedModel::new(rec)?;
    Client::connect(addr)?.query(&model, input, k)
}
