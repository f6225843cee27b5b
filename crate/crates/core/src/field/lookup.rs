use std::fmt;
use std::str::FromStr;

use super::element::{encode, FieldElement};
use super::quant::{rescale_div, round_half_away, QuantConfig};
use super::FieldError;

/// Nonlinear functions realised as lookup tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FunctionId {
    Relu,
    Gelu,
    Exp,
    Recip,
    Rsqrt,
    /// Division by `2^f`, used by the rescale gadget.
    RescaleDiv,
}

impl FunctionId {
    pub const ALL: [FunctionId; 6] = [
        FunctionId::Relu,
        FunctionId::Gelu,
        FunctionId::Exp,
        FunctionId::Recip,
        FunctionId::Rsqrt,
        FunctionId::RescaleDiv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionId::Relu => "relu",
            FunctionId::Gelu => "gelu",
            FunctionId::Exp => "exp",
            FunctionId::Recip => "recip",
            FunctionId::Rsqrt => "rsqrt",
            FunctionId::RescaleDiv => "rescale_div",
        }
    }

    /// Stable one-byte tag used in digests and proof files.
    pub fn tag(self) -> u8 {
        match self {
            FunctionId::Relu => 1,
            FunctionId::Gelu => 2,
            FunctionId::Exp => 3,
            FunctionId::Recip => 4,
            FunctionId::Rsqrt => 5,
            FunctionId::RescaleDiv => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.tag() == tag)
    }

    /// Table output for an in-range fixed-point input.
    pub fn eval(self, q: i64, cfg: &QuantConfig) -> i64 {
        debug_assert!(cfg.in_range(q));
        let f = cfg.frac_bits();
        let scale = cfg.scale() as f64;
        let x = q as f64 / scale;
        let raw = match self {
            FunctionId::Relu => q.max(0),
            FunctionId::Gelu => round_half_away(gelu(x) * scale) as i64,
            FunctionId::Exp => {
                let y = libm::exp(x) * scale;
                if y >= cfg.range_max() as f64 {
                    cfg.range_max()
                } else {
                    round_half_away(y) as i64
                }
            }
            FunctionId::Recip => {
                if q == 0 {
                    cfg.range_max()
                } else {
                    div_round_half_away(1i64 << (2 * f), q)
                }
            }
            FunctionId::Rsqrt => {
                if q <= 0 {
                    cfg.range_max()
                } else {
                    round_half_away(scale / x.sqrt()) as i64
                }
            }
            FunctionId::RescaleDiv => rescale_div(q, f),
        };
        raw.clamp(cfg.range_min(), cfg.range_max())
    }

    /// Saturates the input to the table range before evaluating.
    pub fn eval_saturating(self, q: i64, cfg: &QuantConfig) -> (i64, bool) {
        let (c, sat) = cfg.saturate(q);
        (self.eval(c, cfg), sat)
    }

    /// The real function the table approximates.
    pub fn real(self, x: f64) -> f64 {
        match self {
            FunctionId::Relu => x.max(0.0),
            FunctionId::Gelu => gelu(x),
            FunctionId::Exp => libm::exp(x),
            FunctionId::Recip => 1.0 / x,
            FunctionId::Rsqrt => 1.0 / x.sqrt(),
            FunctionId::RescaleDiv => x,
        }
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionId {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| FieldError::UnknownFunction(s.to_string()))
    }
}

/// Exact erf-based GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn div_round_half_away(n: i64, d: i64) -> i64 {
    let q = n / d;
    let r = n % d;
    if 2 * r.abs() >= d.abs() {
        q + if (n < 0) ^ (d < 0) { -1 } else { 1 }
    } else {
        q
    }
}

/// Complete table of a function over the signed B-bit range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LookupTable {
    function: FunctionId,
    cfg: QuantConfig,
    outputs: Vec<i64>,
}

impl LookupTable {
    pub fn function(&self) -> FunctionId {
        self.function
    }

    pub fn config(&self) -> &QuantConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Row index holding input `q`, if in range.
    pub fn index_of(&self, q: i64) -> Option<usize> {
        self.cfg.in_range(q).then(|| (q - self.cfg.range_min()) as usize)
    }

    /// Signed `(input, output)` of a row.
    pub fn row(&self, idx: usize) -> (i64, i64) {
        (self.cfg.range_min() + idx as i64, self.outputs[idx])
    }

    pub fn field_row(&self, idx: usize) -> (FieldElement, FieldElement) {
        let (i, o) = self.row(idx);
        (FieldElement::from_i64(i), FieldElement::from_i64(o))
    }

    pub fn rows(&self) -> impl Iterator<Item = (FieldElement, FieldElement)> + '_ {
        (0..self.len()).map(|i| self.field_row(i))
    }

    pub fn lookup(&self, q: i64) -> Option<i64> {
        self.index_of(q).map(|i| self.outputs[i])
    }

    pub fn contains(&self, input: FieldElement, output: FieldElement) -> bool {
        let q = super::decode(input);
        self.lookup(q).is_some_and(|o| FieldElement::from_i64(o) == output)
    }

    pub fn contains_input(&self, input: FieldElement) -> bool {
        self.index_of(super::decode(input)).is_some()
    }
}

pub fn build_lookup(function: FunctionId, cfg: &QuantConfig) -> LookupTable {
    let outputs = (cfg.range_min()..=cfg.range_max()).map(|q| function.eval(q, cfg)).collect();
    LookupTable { function, cfg: *cfg, outputs }
}

/// Encodes a table output, for callers that want the field form directly.
pub fn encode_output(table: &LookupTable, q: i64) -> Option<FieldElement> {
    table.lookup(q).and_then(|o| encode(o).ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_small_table() {
        let cfg = QuantConfig::new(2, 4).unwrap();
        let t = build_lookup(FunctionId::Relu, &cfg);
        assert_eq!(t.len(), 15);
        assert_eq!(t.lookup(-3), Some(0));
        assert_eq!(t.lookup(7), Some(7));
        assert_eq!(t.lookup(8), None);
    }

    #[test]
    fn exp_at_zero() {
        let cfg = QuantConfig::new(4, 16).unwrap();
        let t = build_lookup(FunctionId::Exp, &cfg);
        assert_eq!(t.lookup(0), Some(16));
        assert_eq!(t.lookup(cfg.range_min()), Some(0));
        assert_eq!(t.lookup(cfg.range_max()), Some(cfg.range_max()));
    }

    #[test]
    fn recip_and_rsqrt_edges() {
        let cfg = QuantConfig::default();
        let recip = build_lookup(FunctionId::Recip, &cfg);
        assert_eq!(recip.lookup(0), Some(cfg.range_max()));
        assert_eq!(recip.lookup(128), Some(128));
        assert_eq!(recip.lookup(-256), Some(-64));
        assert_eq!(recip.lookup(3), Some(cfg.range_max().min(5461)));
        let rsqrt = build_lookup(FunctionId::Rsqrt, &cfg);
        assert_eq!(rsqrt.lookup(0), Some(cfg.range_max()));
        assert_eq!(rsqrt.lookup(-5), Some(cfg.range_max()));
        assert_eq!(rsqrt.lookup(512), Some(64));
    }

    #[test]
    fn rounding_division() {
        assert_eq!(div_round_half_away(7, 2), 4);
        assert_eq!(div_round_half_away(-7, 2), -4);
        assert_eq!(div_round_half_away(7, -2), -4);
        assert_eq!(div_round_half_away(5, 3), 2);
        assert_eq!(div_round_half_away(4, 3), 1);
    }

    #[test]
    fn names_round_trip() {
        for f in FunctionId::ALL {
            assert_eq!(f.name().parse::<FunctionId>().unwrap(), f);
            assert_eq!(FunctionId::from_tag(f.tag()), Some(f));
        }
        assert!("tanh".parse::<FunctionId>().is_err());
    }
}
