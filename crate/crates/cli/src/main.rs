use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zkml_core::argument::{verify_with_min_k, Proof, DEFAULT_K};
use zkml_core::circuit::{count_constraints, profile};
use zkml_core::field::{decode, dequantize_fixed, QuantConfig};
use zkml_core::graph::{parse_graph, reduce};
use zkml_core::zoo::{MlpConfig, NanoGptConfig, WeightStore};
use zkml_protocol::bench::{format_tables, run_suite, to_tsv, Suite};
use zkml_protocol::bundle::{parse_input, random_input};
use zkml_protocol::memory::TrackingAllocator;
use zkml_protocol::registry::now;
use zkml_protocol::{client_query, Arch, Input, ModelBundle, Published, PublishedModel, Registry, Server};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

const DEFAULT_SUITE: &str = include_str!("../../../suites/default.toml");

#[derive(Parser)]
#[command(name = "zkml", about = "Commit to a model, prove its inferences, verify the proofs", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded zoo model bundle (graph, weights, manifest).
    Init(InitArgs),
    /// Compile a model and write its public circuit description.
    Compile {
        #[command(flatten)]
        model: ModelArgs,
        /// Where to write the description (binary).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the model commitment.
    Commit {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Append the model's commitment record to a registry.
    Publish {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        registry: PathBuf,
    },
    /// Run the model on one input and write a proof.
    Prove {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Proof file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a proof file against a registry record.
    Verify {
        /// Model id in the registry.
        #[arg(long)]
        model: String,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        proof: PathBuf,
        /// Minimum number of opened rows to accept.
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Answer inference requests with proofs.
    Serve {
        /// Model bundle directories (repeatable).
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, value_parser = parse_rows)]
        rows: Option<usize>,
        #[arg(long, value_parser = parse_quant)]
        quant: Option<QuantConfig>,
        /// Test only: answer every request with this other bundle.
        #[arg(long, hide = true)]
        swap_model: Option<PathBuf>,
    },
    /// Send one request to a server and verify the answer locally.
    Query {
        /// Model id in the registry.
        #[arg(long)]
        model: String,
        #[arg(long)]
        registry: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Run a benchmark suite and print tables.
    Bench {
        /// Suite file (TOML); the built-in default suite when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Directory for bench.tsv and bench.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Constraint and geometry report for a model.
    Profile {
        #[command(flatten)]
        model: ModelArgs,
        /// Count without materializing the matrix (no weights needed).
        #[arg(long)]
        count_only: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Nanogpt,
    Mlp,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, value_enum)]
    model: Kind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_parser = parse_quant)]
    quant: Option<QuantConfig>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model bundle directory.
    #[arg(long, conflicts_with_all = ["graph", "weights"])]
    model: Option<PathBuf>,
    /// Graph file, with --weights, instead of a bundle.
    #[arg(long, requires = "weights")]
    graph: Option<PathBuf>,
    #[arg(long, requires = "graph")]
    weights: Option<PathBuf>,
    /// Quantization `f,B`; overrides the bundle's.
    #[arg(long, value_parser = parse_quant)]
    quant: Option<QuantConfig>,
    /// Row cap (power of two); columns overflow into extra lanes.
    #[arg(long, value_parser = parse_rows)]
    rows: Option<usize>,
}

#[derive(Args)]
struct InputArgs {
    /// Comma-separated token ids or values.
    #[arg(long)]
    input: Option<String>,
    /// Seed for a random input when --input is absent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_quant(s: &str) -> Result<QuantConfig, String> {
    QuantConfig::parse(s).map_err(|e| e.to_string())
}

fn parse_rows(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| "expected an integer")?;
    if n.is_power_of_two() {
        Ok(n)
    } else {
        Err(format!("{} is not a power of two", n))
    }
}

impl ModelArgs {
    fn bundle(&self) -> Result<ModelBundle> {
        let mut b = match (&self.model, &self.graph, &self.weights) {
            (Some(dir), _, _) => {
                ModelBundle::load(dir).with_context(|| format!("loading bundle {}", dir.display()))?
            }
            (None, Some(g), Some(w)) => {
                let text = fs::read_to_string(g).with_context(|| format!("reading {}", g.display()))?;
                let weights = WeightStore::from_bytes(&fs::read(w)?)?;
                let id = g.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                ModelBundle::from_parts(id, text, weights, QuantConfig::default())
            }
            _ => bail!("give --model <dir> or --graph <file> --weights <file>"),
        };
        if let Some(q) = self.quant {
            b.manifest.quant = [q.frac_bits(), q.lookup_bits()];
        }
        Ok(b)
    }
}

impl InputArgs {
    fn resolve(&self, g: &zkml_core::graph::Graph) -> Result<Input> {
        Ok(match &self.input {
            Some(text) => parse_input(g, text)?,
            None => random_input(g, &mut ChaCha8Rng::seed_from_u64(self.seed)),
        })
    }
}

fn init(a: &InitArgs) -> Result<()> {
    let cfg = a.quant.unwrap_or_default();
    let arch = match a.model {
        Kind::Nanogpt => {
            let t = NanoGptConfig::toy();
            Arch::nanogpt(NanoGptConfig {
                vocab_size: a.vocab.unwrap_or(t.vocab_size),
                block_size: a.block.unwrap_or(t.block_size),
                n_layers: a.layers.unwrap_or(t.n_layers),
                n_heads: a.heads.unwrap_or(t.n_heads),
                embed_size: a.embed.unwrap_or(t.embed_size),
            })
        }
        Kind::Mlp => {
            let t = MlpConfig::toy();
            Arch::mlp(MlpConfig {
                n_layers: a.layers.unwrap_or(t.n_layers),
                width: a.width.unwrap_or(t.width),
            })
        }
    };
    let id =
        a.id.clone()
            .unwrap_or_else(|| a.out.file_name().and_then(|s| s.to_str()).unwrap_or("model").to_string());
    let b = ModelBundle::generate(&id, arch, a.seed, cfg)?;
    b.save(&a.out)?;
    println!("{}\t{}", id, b.commitment()?);
    Ok(())
}

fn print_outputs(values: &[f64]) {
    let shown: Vec<String> = values.iter().take(16).map(|v| format!("{:.4}", v)).collect();
    let more = if values.len() > 16 { format!(" ... ({} values)", values.len()) } else { String::new() };
    println!("output: {}{}", shown.join(","), more);
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Init(a) => init(&a)?,
        Cmd::Compile { model, out } => {
            let b = model.bundle()?;
            let p = b.prepare(model.rows)?;
            print!("{}", profile(&p.circuit, &p.graph));
            if let Some(out) = out {
                fs::write(&out, p.pk.description().to_bytes())?;
                println!("description written to {}", out.display());
            }
        }
        Cmd::Commit { model } => println!("{}", model.bundle()?.commitment()?),
        Cmd::Publish { model, registry } => {
            let p = model.bundle()?.prepare(model.rows)?;
            let rec = p.record(now());
            match Registry::open(&registry).publish(&rec)? {
                Published::New => println!("published {} {}", rec.model_id, rec.digest),
                Published::AlreadyPresent => println!("{} already published with this content", rec.model_id),
            }
        }
        Cmd::Prove { model, input, k, out } => {
            let p = model.bundle()?.prepare(model.rows)?;
            let x = input.resolve(&p.graph)?;
            let (wit, proof) = p.prove(&x, k)?;
            let bytes = proof.to_bytes();
            fs::write(&out, &bytes)?;
            let cfg = p.circuit.cfg;
            let vals: Vec<f64> = wit
                .outputs
                .iter()
                .flat_map(|t| t.data.iter().map(move |&v| dequantize_fixed(v, &cfg)))
                .collect();
            print_outputs(&vals);
            println!(
                "proof: {} bytes, {} rows opened, witness {} bytes",
                bytes.len(),
                proof.indices.len(),
                wit.byte_size(&p.circuit.geometry)
            );
        }
        Cmd::Verify { model, registry, proof, k } => {
            let rec = Registry::open(&registry)
                .get(&model)?
                .ok_or_else(|| anyhow!("model {} is not in the registry", model))?;
            let m = PublishedModel::new(rec)?;
            let p = Proof::from_bytes(&fs::read(&proof)?)?;
            let report = verify_with_min_k(&p, &m.desc, &m.mc, k.min(m.desc.n_rows));
            println!("{}", report);
            if !report.accepted {
                return Ok(ExitCode::FAILURE);
            }
            let cfg = m.desc.cfg;
            let vals: Vec<f64> =
                p.public_outputs(&m.desc).iter().map(|&v| dequantize_fixed(decode(v), &cfg)).collect();
            print_outputs(&vals);
        }
        Cmd::Serve { model, registry, addr, rows, quant, swap_model } => {
            let reg = Registry::open(&registry);
            let load = |dir: &Path| -> Result<_> {
                let mut b = ModelBundle::load(dir).with_context(|| format!("loading {}", dir.display()))?;
                if let Some(q) = quant {
                    b.manifest.quant = [q.frac_bits(), q.lookup_bits()];
                }
                Ok(b.prepare(rows)?)
            };
            let models = model.iter().map(|d| load(d)).collect::<Result<Vec<_>>>()?;
            let mut server = Server::new(models, &reg)?;
            if let Some(dir) = swap_model {
                eprintln!("warning: answering every request with {}", dir.display());
                server = server.with_swap(load(&dir)?);
            }
            let ids: Vec<String> = server.model_ids().map(String::from).collect();
            let handle = server.spawn(&addr)?;
            println!("serving {} on {}", ids.join(","), handle.addr());
            handle.join();
        }
        Cmd::Query { model, registry, addr, input, k } => {
            let reg = Registry::open(&registry);
            let rec = reg.get(&model)?.ok_or_else(|| anyhow!("model {} is not in the registry", model))?;
            let x = input.resolve(PublishedModel::new(rec)?.graph())?;
            let out = client_query(addr.as_str(), &model, &x, k, &reg)?;
            print_outputs(&out.output);
            println!("{} ({} proof bytes, verified in {:?})", out.report, out.proof_bytes, out.verify_time);
            if !out.report.accepted {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Bench { suite, out } => {
            let suite = match suite {
                Some(p) => Suite::load(&p)?,
                None => Suite::parse(DEFAULT_SUITE)?,
            };
            let recs = run_suite(&suite)?;
            let tables = format_tables(&recs);
            print!("{}", tables);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("bench.tsv"), to_tsv(&recs))?;
                fs::write(dir.join("bench.txt"), &tables)?;
            }
        }
        Cmd::Profile { model, count_only } => {
            let b = model.bundle()?;
            let rep = if count_only {
                let g = reduce(&parse_graph(&b.graph_text)?)?;
                count_constraints(&g, &b.cfg()?, model.rows)?
            } else {
                let p = b.prepare(model.rows)?;
                profile(&p.circuit, &p.graph)
            };
            print!("{}", rep);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}
