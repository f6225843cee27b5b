use super::element::{encode, FieldElement};
use super::FieldError;

/// Largest supported lookup width; tables have `2^B - 1` rows.
pub const MAX_LOOKUP_BITS: u32 = 20;

/// Fixed-point precision and lookup-table range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QuantConfig {
    frac_bits: u32,
    lookup_bits: u32,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { frac_bits: 7, lookup_bits: 16 }
    }
}

impl QuantConfig {
    pub fn new(frac_bits: u32, lookup_bits: u32) -> Result<Self, FieldError> {
        if frac_bits < 2 || lookup_bits > MAX_LOOKUP_BITS || frac_bits + 2 > lookup_bits {
            return Err(FieldError::BadQuantConfig { frac_bits, lookup_bits });
        }
        Ok(Self { frac_bits, lookup_bits })
    }

    /// Parses the `f,B` form used on the command line.
    pub fn parse(s: &str) -> Result<Self, FieldError> {
        let bad = || FieldError::BadQuantSpec(s.to_string());
        let (f, b) = s.split_once(',').ok_or_else(bad)?;
        let f = f.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Self::new(f, b)
    }

    #[inline]
    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    #[inline]
    pub fn lookup_bits(&self) -> u32 {
        self.lookup_bits
    }

    /// `2^f` as an integer.
    #[inline]
    pub fn scale(&self) -> i64 {
        1 << self.frac_bits
    }

    #[inline]
    pub fn range_min(&self) -> i64 {
        -(1 << (self.lookup_bits - 1)) + 1
    }

    #[inline]
    pub fn range_max(&self) -> i64 {
        (1 << (self.lookup_bits - 1)) - 1
    }

    /// Value written into masked attention scores.
    #[inline]
    pub fn mask_value(&self) -> i64 {
        self.range_min()
    }

    #[inline]
    pub fn table_len(&self) -> usize {
        (1usize << self.lookup_bits) - 1
    }

    #[inline]
    pub fn in_range(&self, q: i64) -> bool {
        q >= self.range_min() && q <= self.range_max()
    }

    /// Clamps into the lookup range, reporting whether the value moved.
    #[inline]
    pub fn saturate(&self, q: i64) -> (i64, bool) {
        let c = q.clamp(self.range_min(), self.range_max());
        (c, c != q)
    }
}

impl std::fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.frac_bits, self.lookup_bits)
    }
}

/// Rounds half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Real to fixed-point integer `round(x * 2^f)`.
pub fn quantize_fixed(x: f64, cfg: &QuantConfig) -> Result<i64, FieldError> {
    let scaled = x * cfg.scale() as f64;
    if !scaled.is_finite() {
        return Err(FieldError::QuantizationOverflow(x));
    }
    let limit = (1i64 << (cfg.lookup_bits() - 1)) as f64;
    if scaled.abs() >= limit {
        return Err(FieldError::QuantizationOverflow(x));
    }
    let q = round_half_away(scaled) as i64;
    if !cfg.in_range(q) {
        return Err(FieldError::QuantizationOverflow(x));
    }
    Ok(q)
}

pub fn quantize(x: f64, cfg: &QuantConfig) -> Result<FieldElement, FieldError> {
    encode(quantize_fixed(x, cfg)?)
}

pub fn dequantize_fixed(q: i64, cfg: &QuantConfig) -> f64 {
    q as f64 / cfg.scale() as f64
}

pub fn dequantize(x: FieldElement, cfg: &QuantConfig) -> f64 {
    dequantize_fixed(super::element::decode(x), cfg)
}

/// `floor((q + 2^(f-1)) / 2^f)`: division by the scale rounding halves up.
#[inline]
pub fn rescale_div(q: i64, frac_bits: u32) -> i64 {
    (q + (1 << (frac_bits - 1))) >> frac_bits
}
