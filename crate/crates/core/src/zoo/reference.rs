//! Floating-point forward passes used as the oracle for quantized inference.
//! Written directly against the weight tensors, independent of the graph IR.

use super::{MlpConfig, NanoGptConfig, WeightStore};

fn w(ws: &WeightStore, name: &str) -> Vec<f64> {
    ws.get(name).unwrap_or_else(|| panic!("missing weight {}", name)).data.iter().map(|&x| x as f64).collect()
}

/// `x[rows, k] @ m[k, n] + b[n]`
fn affine(x: &[f64], rows: usize, k: usize, m: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        for j in 0..n {
            let mut acc = b[j];
            for i in 0..k {
                acc += x[r * k + i] * m[i * n + j];
            }
            out[r * n + j] = acc;
        }
    }
    out
}

fn layer_norm(x: &[f64], e: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(e) {
        let mean = row.iter().sum::<f64>() / e as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(row.iter().enumerate().map(|(i, v)| (v - mean) * inv * gamma[i] + beta[i]));
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Logits `[block_size, vocab]` for a full-length prompt.
pub fn nanogpt_forward(cfg: &NanoGptConfig, ws: &WeightStore, tokens: &[usize]) -> Vec<f64> {
    let (v, t, e, nh) = (cfg.vocab_size, cfg.block_size, cfg.embed_size, cfg.n_heads);
    let hd = e / nh;
    assert_eq!(tokens.len(), t, "prompt must fill the block");
    let wte = w(ws, "wte");
    let wpe = w(ws, "wpe");
    let mut x = vec![0.0; t * e];
    for (p, &tok) in tokens.iter().enumerate() {
        for i in 0..e {
            x[p * e + i] = wte[tok * e + i] + wpe[p * e + i];
        }
    }
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("h{}.{}", l, s);
        let a = layer_norm(&x, e, &w(ws, &p("ln1.weight")), &w(ws, &p("ln1.bias")));
        let q = affine(&a, t, e, &w(ws, &p("attn.q.weight")), &w(ws, &p("attn.q.bias")));
        let k = affine(&a, t, e, &w(ws, &p("attn.k.weight")), &w(ws, &p("attn.k.bias")));
        let vv = affine(&a, t, e, &w(ws, &p("attn.v.weight")), &w(ws, &p("attn.v.bias")));
        let mut y = vec![0.0; t * e];
        let scale = 1.0 / (hd as f64).sqrt();
        for h in 0..nh {
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        (0..hd).map(|d| q[i * e + h * hd + d] * k[j * e + h * hd + d]).sum::<f64>() * scale
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for d in 0..hd {
                    y[i * e + h * hd + d] = (0..=i).map(|j| exps[j] / z * vv[j * e + h * hd + d]).sum();
                }
            }
        }
        let o = affine(&y, t, e, &w(ws, &p("attn.proj.weight")), &w(ws, &p("attn.proj.bias")));
        for i in 0..x.len() {
            x[i] += o[i];
        }
        let a = layer_norm(&x, e, &w(ws, &p("ln2.weight")), &w(ws, &p("ln2.bias")));
        let mut f = affine(&a, t, e, &w(ws, &p("mlp.fc.weight")), &w(ws, &p("mlp.fc.bias")));
        f.iter_mut().for_each(|z| *z = gelu(*z));
        let o = affine(&f, t, 4 * e, &w(ws, &p("mlp.proj.weight")), &w(ws, &p("mlp.proj.bias")));
        for i in 0..x.len() {
            x[i] += o[i];
        }
    }
    let x = layer_norm(&x, e, &w(ws, "ln_f.weight"), &w(ws, "ln_f.bias"));
    let mut logits = vec![0.0; t * v];
    for p in 0..t {
        for tok in 0..v {
            logits[p * v + tok] = (0..e).map(|i| x[p * e + i] * wte[tok * e + i]).sum();
        }
    }
    logits
}

pub fn mlp_forward(cfg: &MlpConfig, ws: &WeightStore, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 0..cfg.n_layers {
        h = affine(&h, 1, cfg.width, &w(ws, &format!("l{}.weight", l)), &w(ws, &format!("l{}.bias", l)));
        h.iter_mut().for_each(|z| *z = z.max(0.0));
    }
    h
}
