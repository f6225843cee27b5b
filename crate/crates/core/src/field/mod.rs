//! Prime-field arithmetic, fixed-point quantization and lookup tables.

mod element;
mod lookup;
mod quant;

pub use element::{decode, encode, FieldElement, HALF_RANGE, MODULUS};
pub use lookup::{build_lookup, encode_output, gelu, FunctionId, LookupTable};
pub use quant::{
    dequantize, dequantize_fixed, quantize, quantize_fixed, rescale_div, round_half_away, QuantConfig,
    MAX_LOOKUP_BITS,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("value outside field half-range: {0}")]
    OutsideHalfRange(i64),
    #[error("quantization overflow: {0}")]
    QuantizationOverflow(f64),
    #[error("invalid quantization config f={frac_bits}, B={lookup_bits} (need 2 <= f <= B-2, B <= 20)")]
    BadQuantConfig { frac_bits: u32, lookup_bits: u32 },
    #[error("cannot parse quantization spec {0:?}, expected f,B")]
    BadQuantSpec(String),
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
}
