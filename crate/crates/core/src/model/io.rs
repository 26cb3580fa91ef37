//! Versioned parameter / checkpoint files.
//!
//! ```text
//! 0..8    magic "VRAGPRM\0"
//! 8..12   version u32
//! 12      flags u8 (bit 0: optimiser state follows the weights)
//! 13..29  input_dim, hidden_dim, layers, embed_dim as u32
//! 29..33  attention_tied, region_agg, pooling, concat as u8 codes
//! 33..    weights as f64, canonical order (per layer: weight row-major, bias)
//!         [step u64, first moments f64.., second moments f64..]
//! last 4  CRC32
//! ```
//!
//! Values are stored at full precision so a save/load round trip is bit-exact.

use std::path::Path;

use super::{ConcatMode, ModelConfig, ModelParams, Pooling, RegionAggregation, Weights};
use crate::binio::{self, Cursor, CRC_LEN};
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: [u8; 8] = *b"VRAGPRM\0";
pub const PARAMS_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 4 * 4 + 4;
const FLAG_OPTIMIZER: u8 = 1;

fn encode_header(config: &ModelConfig, flags: u8, buf: &mut Vec<u8>) -> Result<()> {
    buf.extend_from_slice(&PARAMS_MAGIC);
    buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    buf.push(flags);
    for d in [config.input_dim, config.hidden_dim, config.layers, config.embed_dim] {
        let d = u32::try_from(d)
            .map_err(|_| Error::DimensionOverflow(format!("model dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.push(u8::from(config.attention_tied));
    buf.push(config.region_agg.code());
    buf.push(config.pooling.code());
    buf.push(config.concat.code());
    Ok(())
}

fn encode_weights(weights: &Weights, buf: &mut Vec<u8>) {
    for v in weights.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_weights(config: &ModelConfig, cur: &mut Cursor<'_>) -> Result<Weights> {
    let mut weights = Weights::zeros(config);
    for linear in weights.linears_mut() {
        for v in linear.weight.iter_mut().chain(linear.bias.iter_mut()) {
            *v = cur.f64()?;
        }
    }
    Ok(weights)
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * params.weights().len() + CRC_LEN);
    encode_header(params.config(), 0, &mut buf)?;
    encode_weights(params.weights(), &mut buf);
    binio::write_with_crc(path.as_ref(), buf)
}

/// Parameters plus Adam state (`step`, first and second moments).
pub fn save_checkpoint(
    params: &ModelParams,
    step: u64,
    first_moment: &Weights,
    second_moment: &Weights,
    path: impl AsRef<Path>,
) -> Result<()> {
    let weights = params.weights();
    if !weights.shapes_match(first_moment) || !weights.shapes_match(second_moment) {
        return Err(Error::ShapeMismatch("optimiser state does not match parameters".into()));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (3 * weights.len() + 1) + CRC_LEN);
    encode_header(params.config(), FLAG_OPTIMIZER, &mut buf)?;
    encode_weights(weights, &mut buf);
    buf.extend_from_slice(&step.to_le_bytes());
    encode_weights(first_moment, &mut buf);
    encode_weights(second_moment, &mut buf);
    binio::write_with_crc(path.as_ref(), buf)
}

/// Optimiser state restored from a checkpoint: `(step, first, second)` moments.
pub type OptimizerState = (u64, Weights, Weights);

/// Loads parameters from either a plain parameter file or a checkpoint.
pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    load_checkpoint(path).map(|(p, _)| p)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, Option<OptimizerState>)> {
    let bytes = binio::read_file(path.as_ref())?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<(ModelParams, Option<OptimizerState>)> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::Truncated {
            expected: (HEADER_LEN + CRC_LEN) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(8)?;
    if magic != PARAMS_MAGIC {
        return Err(Error::BadMagic {
            expected: PARAMS_MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let version = cur.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::VersionMismatch {
            expected: PARAMS_VERSION,
            found: version,
        });
    }
    let flags = cur.u8()?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let bad_code = |what: &str, code: u8| Error::InvalidConfig(format!("unknown {what} code {code}"));
    let tied = cur.u8()?;
    let region_agg = cur.u8()?;
    let pooling = cur.u8()?;
    let concat = cur.u8()?;
    let config = ModelConfig {
        input_dim: dims[0],
        hidden_dim: dims[1],
        layers: dims[2],
        embed_dim: dims[3],
        attention_tied: match tied {
            0 => false,
            1 => true,
            c => return Err(bad_code("tied-attention", c)),
        },
        region_agg: RegionAggregation::from_code(region_agg)
            .ok_or_else(|| bad_code("region aggregation", region_agg))?,
        pooling: Pooling::from_code(pooling).ok_or_else(|| bad_code("pooling", pooling))?,
        concat: ConcatMode::from_code(concat).ok_or_else(|| bad_code("concat", concat))?,
    };
    config.validate()?;

    let count = param_count(&config)?;
    let blocks: u64 = if flags & FLAG_OPTIMIZER != 0 { 3 } else { 1 };
    let extra: u64 = if flags & FLAG_OPTIMIZER != 0 { 8 } else { 0 };
    let expected = count
        .checked_mul(8 * blocks)
        .and_then(|n| n.checked_add((HEADER_LEN + CRC_LEN) as u64 + extra))
        .ok_or_else(|| Error::DimensionOverflow("parameter count overflows".into()))?;
    binio::check_len(expected, bytes.len())?;
    binio::verify_crc(bytes)?;
    debug_assert_eq!(cur.position(), HEADER_LEN);

    let weights = decode_weights(&config, &mut cur)?;
    let optimizer = if flags & FLAG_OPTIMIZER != 0 {
        let step = cur.u64()?;
        let first = decode_weights(&config, &mut cur)?;
        let second = decode_weights(&config, &mut cur)?;
        Some((step, first, second))
    } else {
        None
    };
    Ok((ModelParams::from_weights(config, weights)?, optimizer))
}

/// Scalar count of a configuration, computed without allocating.
fn param_count(config: &ModelConfig) -> Result<u64> {
    let linear = |i: usize, o: usize| -> Option<u64> {
        (i as u64).checked_mul(o as u64)?.checked_add(o as u64)
    };
    let h = config.hidden_dim;
    let mut total = linear(config.input_dim, h);
    for _ in 0..config.layers {
        total = total
            .zip(linear(h, h))
            .and_then(|(t, l)| t.checked_add(l.checked_mul(3)?));
    }
    for part in [
        linear(config.layers, 1),
        linear(config.concat_width(), config.embed_dim),
        linear(config.embed_dim, config.embed_dim),
    ] {
        total = total.zip(part).and_then(|(t, p)| t.checked_add(p));
    }
    total.ok_or_else(|| Error::DimensionOverflow("parameter count overflows".into()))
}
