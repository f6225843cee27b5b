//! Benchmark harness. A suite is a TOML file of `[[run]]` entries; each run
//! yields one [`BenchRecord`], grouped into tables by its `table` key.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use zkml_core::argument::{verify_with_min_k, DEFAULT_K};
use zkml_core::circuit::{count_constraints, profile, CircuitProfile};
use zkml_core::field::QuantConfig;
use zkml_core::graph::{parse_graph, reduce};

use crate::bundle::{Arch, ModelBundle};
use crate::memory::measure_peak;
use crate::ProtocolError;

fn default_seed() -> u64 {
    7
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_reps() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub table: String,
    pub label: String,
    pub model: Arch,
    #[serde(default)]
    pub row_cap: Option<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Proving repetitions; the median time is reported.
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Profile only, without compiling the matrix or proving.
    #[serde(default)]
    pub count_only: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    /// `[f, B]`, default `[7, 16]`.
    #[serde(default)]
    pub quant: Option<[u32; 2]>,
    #[serde(default, rename = "run")]
    pub runs: Vec<SuiteEntry>,
}

impl Suite {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        toml::from_str(text).map_err(|e| ProtocolError::Suite(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn cfg(&self) -> Result<QuantConfig, ProtocolError> {
        let [f, b] = self.quant.unwrap_or([7, 16]);
        Ok(QuantConfig::new(f, b)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchRecord {
    pub table: String,
    pub label: String,
    /// Parameter count N.
    pub n_params: usize,
    /// Constraint count M.
    pub m: usize,
    pub ratio: Option<f64>,
    pub n_rows: usize,
    pub n_columns: usize,
    pub prove_time: Option<Duration>,
    pub verify_time: Option<Duration>,
    /// Peak heap bytes during witness generation and proving.
    pub peak_memory: Option<usize>,
    /// Whether `peak_memory` was measured by the tracking allocator rather
    /// than estimated from the matrix and proof sizes.
    pub peak_measured: bool,
    pub proof_bytes: Option<usize>,
    pub witness_bytes: Option<usize>,
    pub error: Option<String>,
}

impl BenchRecord {
    fn from_profile(e: &SuiteEntry, p: &CircuitProfile) -> Self {
        Self {
            table: e.table.clone(),
            label: e.label.clone(),
            n_params: p.n,
            m: p.m,
            ratio: p.ratio,
            n_rows: p.n_rows,
            n_columns: p.n_columns,
            ..Default::default()
        }
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

/// Runs one entry. Failures are recorded in the returned row.
pub fn run_entry(e: &SuiteEntry, cfg: &QuantConfig) -> BenchRecord {
    match try_entry(e, cfg) {
        Ok(r) => r,
        Err(err) => BenchRecord {
            table: e.table.clone(),
            label: e.label.clone(),
            error: Some(err.to_string()),
            ..Default::default()
        },
    }
}

fn try_entry(e: &SuiteEntry, cfg: &QuantConfig) -> Result<BenchRecord, ProtocolError> {
    let bundle = ModelBundle::generate(&e.label, e.model, e.seed, *cfg)?;
    if e.count_only {
        let g = reduce(&parse_graph(&bundle.graph_text)?)?;
        return Ok(BenchRecord::from_profile(e, &count_constraints(&g, cfg, e.row_cap)?));
    }
    let model = bundle.prepare(e.row_cap)?;
    let mut rec = BenchRecord::from_profile(e, &profile(&model.circuit, &model.graph));
    let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
    let mut times = Vec::new();
    let mut last = None;
    for i in 0..e.reps.max(1) {
        let input = model.random_input(&mut rng);
        let t = Instant::now();
        let (out, peak) = measure_peak(|| model.prove(&input, e.k));
        times.push(t.elapsed());
        let (wit, proof) = out?;
        if i == 0 {
            rec.peak_measured = peak.is_some();
            let wb = wit.byte_size(&model.circuit.geometry);
            let tree = 2 * model.circuit.geometry.n_rows * 32;
            rec.peak_memory = Some(peak.unwrap_or(wb + tree + proof.byte_size()));
            rec.witness_bytes = Some(wb);
        }
        last = Some(proof);
    }
    let proof = last.expect("at least one repetition");
    let desc = model.pk.description();
    let t = Instant::now();
    let report = verify_with_min_k(&proof, desc, &model.mc, proof.head.k as usize);
    rec.verify_time = Some(t.elapsed());
    if !report.accepted {
        rec.error = Some(format!("honest proof {}", report));
    }
    rec.prove_time = Some(median(times));
    rec.proof_bytes = Some(proof.byte_size());
    Ok(rec)
}

pub fn run_suite(suite: &Suite) -> Result<Vec<BenchRecord>, ProtocolError> {
    let cfg = suite.cfg()?;
    Ok(suite.runs.iter().map(|e| run_entry(e, &cfg)).collect())
}

/// Column order of the tab-separated output.
pub const TSV_HEADER: &str = "table\tlabel\tN\tM\tratio\tn_rows\tn_columns\tprove_ms\tverify_ms\tpeak_bytes\tpeak_source\tproof_bytes\twitness_bytes\terror";

fn ms(d: Option<Duration>) -> String {
    d.map_or(String::new(), |d| format!("{:.3}", d.as_secs_f64() * 1e3))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn fields(r: &BenchRecord) -> Vec<String> {
    vec![
        r.table.clone(),
        r.label.clone(),
        r.n_params.to_string(),
        r.m.to_string(),
        r.ratio.map_or("undefined".into(), |x| format!("{:.2}", x)),
        r.n_rows.to_string(),
        r.n_columns.to_string(),
        ms(r.prove_time),
        ms(r.verify_time),
        opt(r.peak_memory),
        match (r.peak_memory, r.peak_measured) {
            (None, _) => String::new(),
            (Some(_), true) => "heap".into(),
            (Some(_), false) => "estimate".into(),
        },
        opt(r.proof_bytes),
        opt(r.witness_bytes),
        r.error.clone().unwrap_or_default().replace(['\t', '\n'], " "),
    ]
}

/// One line per record under [`TSV_HEADER`].
pub fn to_tsv(records: &[BenchRecord]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&fields(r).join("\t"));
        out.push('\n');
    }
    out
}

/// Aligned text tables, one per `table` key in first-seen order.
pub fn format_tables(records: &[BenchRecord]) -> String {
    let header: Vec<&str> = TSV_HEADER.split('\t').skip(1).collect();
    let mut tables: Vec<&str> = Vec::new();
    for r in records {
        if !tables.contains(&r.table.as_str()) {
            tables.push(&r.table);
        }
    }
    let mut out = String::new();
    for t in tables {
        let rows: Vec<Vec<String>> =
            records.iter().filter(|r| r.table == t).map(|r| fields(r).split_off(1)).collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[&str]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i == 0 {
                    let _ = write!(s, "{:<w$}", c, w = widths[i]);
                } else {
                    let _ = write!(s, "{:>w$}", c, w = widths[i]);
                }
            }
            s.trim_end().to_string()
        };
        let _ = writeln!(out, "== {} ==", t);
        let _ = writeln!(out, "{}", line(&header));
        for r in &rows {
            let cells: Vec<&str> = r.iter().map(|s| s.as_str()).collect();
            let _ = writeln!(out, "{}", line(&cells));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_suite_gives_empty_tables() {
        let s = Suite::parse("").unwrap();
        let recs = run_suite(&s).unwrap();
        assert!(recs.is_empty());
        assert_eq!(format_tables(&recs), "");
        assert_eq!(to_tsv(&recs), format!("{}\n", TSV_HEADER));
    }

    #[test]
    fn suite_parses_and_failures_are_recorded() {
        let s = Suite::parse(
            r#"
            quant = [7, 16]
            [[run]]
            table = "t"
            label = "tiny-mlp"
            model = { kind = "mlp", n_layers = 1, width = 4 }
            [[run]]
            table = "t"
            label = "impossible-cap"
            model = { kind = "mlp", n_layers = 1, width = 4 }
            row_cap = 3
            "#,
        )
        .unwrap();
        assert_eq!(s.runs[0].k, DEFAULT_K);
        let recs = run_suite(&s).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].error.is_none(), "{:?}", recs[0].error);
        assert!(recs[0].prove_time.is_some() && recs[0].proof_bytes.is_some());
        assert!(recs[1].error.is_some());
        let tsv = to_tsv(&recs);
        assert!(tsv.lines().all(|l| l.split('\t').count() == 14));
        assert!(format_tables(&recs).contains("impossible-cap"));
    }
}
