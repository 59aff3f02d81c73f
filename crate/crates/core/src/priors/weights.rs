//! Binary weight files for [`NeuralDecoder`].
//!
//! Layout, all little-endian:
//!
//! ```text
//! "GPRW"                      magic
//! u32 version                 currently 1
//! u32 layer_count             1 dense + R transposed convolutions
//! layer_count × {u32 in_dim, u32 out_dim, u32 kernel, u32 stride}
//! f32 parameters              per layer: weights (row-major) then biases
//! u64 checksum                CRC-64/XZ of every preceding byte
//! ```
//!
//! Layer 0 is the dense projection (`kernel = stride = 1`, weights
//! `out × in`); layers 1..R are transposed convolutions with `in_dim`/`out_dim`
//! as channel counts and weights `in × out × kernel`.

use std::io::Write;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::neural::{ConvTransposeLayer, DenseLayer, NeuralDecoder};
use crate::error::{Error, Result, WeightsError};

pub const MAGIC: [u8; 4] = *b"GPRW";
pub const VERSION: u32 = 1;

const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);
const LAYER_HEADER_LEN: usize = 16;

pub fn checksum(bytes: &[u8]) -> u64 {
    CHECKSUM.checksum(bytes)
}

pub fn encode(decoder: &NeuralDecoder) -> Vec<u8> {
    let dense = decoder.dense();
    let convs = decoder.convs();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((convs.len() + 1) as u32).to_le_bytes());
    let mut header = |a: usize, b: usize, k: usize, s: usize| {
        for v in [a, b, k, s] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    };
    header(dense.in_dim, dense.out_dim, 1, 1);
    for c in convs {
        header(c.in_ch, c.out_ch, c.kernel, c.stride);
    }
    let params =
        std::iter::once((&dense.weight, &dense.bias)).chain(convs.iter().map(|c| (&c.weight, &c.bias)));
    for (w, b) in params {
        for v in w.iter().chain(b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn truncated(needed: usize, available: usize) -> Error {
    WeightsError::Truncated { needed, available }.into()
}

fn dim_err(layer: usize, detail: String) -> Error {
    WeightsError::DimensionMismatch { layer, detail }.into()
}

pub fn decode(bytes: &[u8]) -> Result<NeuralDecoder> {
    if bytes.len() < 12 {
        return Err(truncated(12, bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WeightsError::BadMagic { found: magic }.into());
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(WeightsError::VersionMismatch {
            found: version,
            expected: VERSION,
        }
        .into());
    }
    let layer_count = read_u32(bytes, 8) as usize;
    if layer_count < 2 {
        return Err(dim_err(
            layer_count,
            format!("need a dense layer and at least one convolution, header declares {layer_count} layers"),
        ));
    }
    let header_end = layer_count
        .checked_mul(LAYER_HEADER_LEN)
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| dim_err(0, "layer count overflows".into()))?;
    if bytes.len() < header_end {
        return Err(truncated(header_end + 8, bytes.len()));
    }
    let headers: Vec<[usize; 4]> = (0..layer_count)
        .map(|l| {
            let at = 12 + l * LAYER_HEADER_LEN;
            [0, 4, 8, 12].map(|o| read_u32(bytes, at + o) as usize)
        })
        .collect();

    // Shape checks before touching the payload, so a corrupted header names
    // its layer instead of surfacing as a length or checksum failure.
    let [d_in, d_out, d_k, d_s] = headers[0];
    if d_k != 1 || d_s != 1 {
        return Err(dim_err(
            0,
            format!("dense layer must have kernel = stride = 1, got {d_k}/{d_s}"),
        ));
    }
    if d_in == 0 || d_out == 0 || d_out % super::INITIAL_LEN != 0 {
        return Err(dim_err(
            0,
            format!("dense {d_in} -> {d_out} is not a valid projection"),
        ));
    }
    let mut channels = d_out / super::INITIAL_LEN;
    let mut n_params = d_in
        .checked_mul(d_out)
        .and_then(|n| n.checked_add(d_out))
        .ok_or_else(|| dim_err(0, "parameter count overflows".into()))?;
    for (l, &[c_in, c_out, k, s]) in headers.iter().enumerate().skip(1) {
        if c_in != channels {
            return Err(dim_err(
                l,
                format!("in channels {c_in} do not match previous layer's {channels}"),
            ));
        }
        if c_out == 0 || s == 0 || k < s {
            return Err(dim_err(
                l,
                format!("invalid shape out={c_out} kernel={k} stride={s}"),
            ));
        }
        n_params = c_in
            .checked_mul(c_out)
            .and_then(|n| n.checked_mul(k))
            .and_then(|n| n.checked_add(c_out))
            .and_then(|n| n.checked_add(n_params))
            .ok_or_else(|| dim_err(l, "parameter count overflows".into()))?;
        channels = c_out;
    }
    if channels != 1 {
        return Err(dim_err(
            layer_count - 1,
            format!("final layer must emit 1 channel, got {channels}"),
        ));
    }

    let payload_end = header_end + n_params * 4;
    let total = payload_end + 8;
    if bytes.len() < total {
        return Err(truncated(total, bytes.len()));
    }
    if bytes.len() > total {
        return Err(WeightsError::TrailingBytes {
            extra: bytes.len() - total,
        }
        .into());
    }
    let stored = u64::from_le_bytes(bytes[payload_end..total].try_into().unwrap());
    let computed = checksum(&bytes[..payload_end]);
    if stored != computed {
        return Err(WeightsError::Checksum { stored, computed }.into());
    }

    let mut cursor = header_end;
    let mut take = |n: usize| -> Vec<f32> {
        let v = bytes[cursor..cursor + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += 4 * n;
        v
    };
    let dense = DenseLayer {
        in_dim: d_in,
        out_dim: d_out,
        weight: take(d_in * d_out),
        bias: take(d_out),
    };
    let convs = headers[1..]
        .iter()
        .map(|&[in_ch, out_ch, kernel, stride]| ConvTransposeLayer {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: take(in_ch * out_ch * kernel),
            bias: take(out_ch),
        })
        .collect();
    NeuralDecoder::from_layers(dense, convs)
}

/// Writes atomically: the file only appears once fully written.
pub fn save_weights(decoder: &NeuralDecoder, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), |f| f.write_all(&encode(decoder)))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NeuralDecoder> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::NeuralDecoderConfig;

    fn tiny() -> NeuralDecoder {
        NeuralDecoder::random(&NeuralDecoderConfig::tiny(), 42).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let d = tiny();
        let bytes = encode(&d);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&tiny());
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes),
            Err(Error::Weights(WeightsError::BadMagic { .. }))
        ));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&tiny());
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(Error::Weights(WeightsError::VersionMismatch {
                found: 9,
                expected: 1
            }))
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&tiny());
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode(&bytes[..cut]),
                Err(Error::Weights(WeightsError::Truncated { .. }))
            ));
        }
    }

    #[test]
    fn flipped_weight_fails_checksum() {
        let mut bytes = encode(&tiny());
        let at = bytes.len() - 20;
        bytes[at] ^= 0x40;
        assert!(matches!(
            decode(&bytes),
            Err(Error::Weights(WeightsError::Checksum { .. }))
        ));
    }

    #[test]
    fn corrupted_layer_dims_name_the_layer() {
        let mut bytes = encode(&tiny());
        // layer 2's in_dim lives at 12 + 2·16
        bytes[12 + 2 * 16] = 5;
        let err = decode(&bytes).unwrap_err();
        match err {
            Error::Weights(WeightsError::DimensionMismatch { layer, detail }) => {
                assert_eq!(layer, 2);
                assert!(detail.contains("in channels 5"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&tiny());
        bytes.push(0);
        assert!(matches!(
            decode(&bytes),
            Err(Error::Weights(WeightsError::TrailingBytes { extra: 1 }))
        ));
    }
}
