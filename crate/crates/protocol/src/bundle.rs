use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use zkml_core::argument::{Proof, ProvingKey};
use zkml_core::circuit::{compile, gen_witness, CircuitMatrix, Witness};
use zkml_core::field::QuantConfig;
use zkml_core::graph::{parse_graph, prepare_inputs, reduce, write_graph, Graph, ModelInput, ParamValues};
use zkml_core::zoo::{
    build_mlp, build_nanogpt, commit, init_mlp, init_nanogpt, MlpConfig, ModelCommitment, NanoGptConfig,
    WeightStore,
};

use crate::registry::CommitmentRecord;
use crate::wire::Input;
use crate::ProtocolError;

pub const MANIFEST_FILE: &str = "model.json";
pub const GRAPH_FILE: &str = "graph.zkg";
pub const WEIGHTS_FILE: &str = "weights.zkw";

/// Architecture a bundle was generated from, when it came from the zoo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Nanogpt { vocab_size: usize, block_size: usize, n_layers: usize, n_heads: usize, embed_size: usize },
    Mlp { n_layers: usize, width: usize },
}

impl Arch {
    pub fn nanogpt(c: NanoGptConfig) -> Self {
        Arch::Nanogpt {
            vocab_size: c.vocab_size,
            block_size: c.block_size,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            embed_size: c.embed_size,
        }
    }

    pub fn mlp(c: MlpConfig) -> Self {
        Arch::Mlp { n_layers: c.n_layers, width: c.width }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Nanogpt { .. } => self.nanogpt_config().expect("nanogpt").param_count(),
            Arch::Mlp { n_layers, width } => MlpConfig { n_layers, width }.param_count(),
        }
    }

    pub fn nanogpt_config(&self) -> Option<NanoGptConfig> {
        match *self {
            Arch::Nanogpt { vocab_size, block_size, n_layers, n_heads, embed_size } => {
                Some(NanoGptConfig { vocab_size, block_size, n_layers, n_heads, embed_size })
            }
            Arch::Mlp { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    /// `[f, B]`.
    pub quant: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Graph text, weights and quantization: everything the provider holds.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub manifest: Manifest,
    pub graph_text: String,
    pub weights: WeightStore,
}

impl ModelBundle {
    pub fn from_parts(id: &str, graph_text: String, weights: WeightStore, cfg: QuantConfig) -> Self {
        let manifest =
            Manifest { id: id.into(), quant: [cfg.frac_bits(), cfg.lookup_bits()], arch: None, seed: None };
        Self { manifest, graph_text, weights }
    }

    /// Zoo model with seeded weights.
    pub fn generate(id: &str, arch: Arch, seed: u64, cfg: QuantConfig) -> Result<Self, ProtocolError> {
        let (graph, weights) = match arch {
            Arch::Nanogpt { .. } => {
                let c = arch.nanogpt_config().expect("nanogpt");
                let w = init_nanogpt(&c, seed, cfg.frac_bits());
                (build_nanogpt(&c, &w)?, w)
            }
            Arch::Mlp { n_layers, width } => {
                let c = MlpConfig { n_layers, width };
                let w = init_mlp(&c, seed, cfg.frac_bits());
                (build_mlp(&c, &w)?, w)
            }
        };
        let mut b = Self::from_parts(id, write_graph(&graph), weights, cfg);
        b.manifest.arch = Some(arch);
        b.manifest.seed = Some(seed);
        Ok(b)
    }

    pub fn load(dir: &Path) -> Result<Self, ProtocolError> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let graph_text = fs::read_to_string(dir.join(GRAPH_FILE))?;
        let weights = WeightStore::from_bytes(&fs::read(dir.join(WEIGHTS_FILE))?)?;
        let b = Self { manifest, graph_text, weights };
        b.cfg()?;
        Ok(b)
    }

    pub fn save(&self, dir: &Path) -> Result<(), ProtocolError> {
        fs::create_dir_all(dir)?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest)?;
        manifest.push('\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::write(dir.join(GRAPH_FILE), &self.graph_text)?;
        fs::write(dir.join(WEIGHTS_FILE), self.weights.to_bytes())?;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn cfg(&self) -> Result<QuantConfig, ProtocolError> {
        let [f, b] = self.manifest.quant;
        Ok(QuantConfig::new(f, b)?)
    }

    /// Commitment over the graph file bytes, canonical weights and `(f, B)`.
    pub fn commitment(&self) -> Result<ModelCommitment, ProtocolError> {
        Ok(commit(self.graph_text.as_bytes(), &self.weights, &self.cfg()?))
    }

    /// Parses, reduces and compiles; builds the proving key.
    pub fn prepare(&self, row_cap: Option<usize>) -> Result<Prepared, ProtocolError> {
        let cfg = self.cfg()?;
        let graph = reduce(&parse_graph(&self.graph_text)?)?;
        let params = self.weights.quantize(&cfg)?;
        let circuit = compile(&graph, &params, &cfg, row_cap)?;
        let pk = ProvingKey::new(&circuit);
        Ok(Prepared {
            id: self.id().into(),
            graph_text: self.graph_text.clone(),
            graph,
            params,
            circuit,
            pk,
            mc: self.commitment()?,
        })
    }
}

/// A compiled model ready to answer requests.
pub struct Prepared {
    pub id: String,
    pub graph_text: String,
    pub graph: Graph,
    pub params: ParamValues,
    pub circuit: CircuitMatrix,
    pub pk: ProvingKey,
    pub mc: ModelCommitment,
}

impl Prepared {
    pub fn witness(&self, input: &Input) -> Result<Witness, ProtocolError> {
        let xs = prepare_inputs(&self.graph, &[input.to_model_input()], &self.circuit.cfg)?;
        Ok(gen_witness(&self.circuit, &self.graph, &xs, &self.params)?)
    }

    /// Runs the model and proves the run with `k` row samples (clamped to
    /// the row count).
    pub fn prove(&self, input: &Input, k: usize) -> Result<(Witness, Proof), ProtocolError> {
        let wit = self.witness(input)?;
        let k = k.min(self.circuit.geometry.n_rows);
        let proof = self.pk.prove(&self.circuit, &wit, &self.mc, k)?;
        Ok((wit, proof))
    }

    pub fn record(&self, published_at: u64) -> CommitmentRecord {
        CommitmentRecord::new(&self.id, &self.mc, self.pk.description(), &self.graph_text, published_at)
    }

    /// Input of the right shape drawn from `rng`.
    pub fn random_input(&self, rng: &mut impl rand::Rng) -> Input {
        random_input(&self.graph, rng)
    }
}

pub fn random_input(g: &Graph, rng: &mut impl rand::Rng) -> Input {
    use zkml_core::graph::{InputKind, SourceKind};
    let src = g.inputs().next().expect("graph has an input");
    match &src.kind {
        SourceKind::Input(InputKind::Tokens { vocab } | InputKind::OneHot { vocab }) => {
            Input::Tokens((0..src.shape[0]).map(|_| rng.random_range(0..*vocab)).collect())
        }
        _ => Input::Values((0..src.numel()).map(|_| rng.random_range(-2.0..2.0)).collect()),
    }
}

/// Comma-separated token ids or values, depending on the graph's input.
pub fn parse_input(g: &Graph, text: &str) -> Result<Input, ProtocolError> {
    use zkml_core::graph::{InputKind, SourceKind};
    let src = g.inputs().next().ok_or_else(|| ProtocolError::Wire("graph has no input".into()))?;
    let items = text.split(',').map(str::trim).filter(|s| !s.is_empty());
    let bad = |s: &str| ProtocolError::Wire(format!("cannot parse input item {:?}", s));
    match &src.kind {
        SourceKind::Input(InputKind::Tokens { .. } | InputKind::OneHot { .. }) => {
            items.map(|s| s.parse().map_err(|_| bad(s))).collect::<Result<_, _>>().map(Input::Tokens)
        }
        _ => items.map(|s| s.parse().map_err(|_| bad(s))).collect::<Result<_, _>>().map(Input::Values),
    }
}

impl Input {
    pub fn to_model_input(&self) -> ModelInput {
        match self {
            Input::Tokens(t) => ModelInput::Tokens(t.clone()),
            Input::Values(v) => ModelInput::Values(v.clone()),
        }
    }
}
