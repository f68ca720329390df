//! Update compression with a normative little-endian wire layout:
//!
//! ```text
//! u8  scheme tag (0 = none, 1 = topk, 2 = quantize)
//! u32 original dim
//! params: none -> (nothing)
//!         topk -> u32 k
//!         quantize -> u8 bits, f64 min, f64 step
//! payload: none -> dim x f64
//!          topk -> k x (u32 index, f64 value), indices ascending
//!          quantize -> dim levels bit-packed, low bits first
//! ```
//!
//! `compressed_bytes` counts the payload only; the header is fixed-size per
//! scheme and reported by [`CompressedUpdate::header_bytes`].

use serde::{Deserialize, Serialize};

use super::wire::{self, Reader};
use crate::error::{Error, Result};
use crate::learning::ParamVector;

const TAG_NONE: u8 = 0;
const TAG_TOPK: u8 = 1;
const TAG_QUANTIZE: u8 = 2;

/// Requested compression scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    None,
    Topk { k: u32 },
    Quantize { bits: u8 },
}

/// Scheme parameters as carried in the header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeParams {
    None,
    TopK { k: u32 },
    Quantize { bits: u8, min: f64, step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedUpdate {
    pub params: SchemeParams,
    pub original_dim: u32,
    pub payload: Vec<u8>,
}

impl CompressedUpdate {
    pub fn original_bytes(&self) -> u64 {
        8 * u64::from(self.original_dim)
    }

    pub fn compressed_bytes(&self) -> u64 {
        self.payload.len() as u64
    }

    pub fn header_bytes(&self) -> u64 {
        match self.params {
            SchemeParams::None => 5,
            SchemeParams::TopK { .. } => 9,
            SchemeParams::Quantize { .. } => 22,
        }
    }

    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_bytes() as usize + self.payload.len());
        match self.params {
            SchemeParams::None => {
                wire::put_u8(&mut out, TAG_NONE);
                wire::put_u32(&mut out, self.original_dim);
            }
            SchemeParams::TopK { k } => {
                wire::put_u8(&mut out, TAG_TOPK);
                wire::put_u32(&mut out, self.original_dim);
                wire::put_u32(&mut out, k);
            }
            SchemeParams::Quantize { bits, min, step } => {
                wire::put_u8(&mut out, TAG_QUANTIZE);
                wire::put_u32(&mut out, self.original_dim);
                wire::put_u8(&mut out, bits);
                wire::put_f64(&mut out, min);
                wire::put_f64(&mut out, step);
            }
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let tag = r.u8()?;
        let original_dim = r.u32()?;
        let params = match tag {
            TAG_NONE => SchemeParams::None,
            TAG_TOPK => SchemeParams::TopK { k: r.u32()? },
            TAG_QUANTIZE => {
                SchemeParams::Quantize { bits: r.u8()?, min: r.f64()?, step: r.f64()? }
            }
            other => return Err(Error::Decode(format!("unknown scheme tag {other}"))),
        };
        let payload = r.take(r.remaining())?.to_vec();
        let update = Self { params, original_dim, payload };
        if update.payload.len() != expected_payload_len(&update.params, original_dim)? {
            return Err(Error::Decode("payload length does not match header".into()));
        }
        Ok(update)
    }
}

fn expected_payload_len(params: &SchemeParams, dim: u32) -> Result<usize> {
    let dim = dim as usize;
    Ok(match *params {
        SchemeParams::None => 8 * dim,
        SchemeParams::TopK { k } => 12 * k as usize,
        SchemeParams::Quantize { bits, .. } => {
            check_bits(bits).map_err(|e| Error::Decode(e.to_string()))?;
            (dim * bits as usize).div_ceil(8)
        }
    })
}

fn check_bits(bits: u8) -> Result<()> {
    match bits {
        4 | 8 | 16 => Ok(()),
        other => Err(Error::Parameter(format!("quantization bits must be 4, 8 or 16, got {other}"))),
    }
}

pub fn compress(v: &ParamVector, scheme: Scheme) -> Result<CompressedUpdate> {
    let dim = v.dim();
    let original_dim = u32::try_from(dim).map_err(|_| Error::Parameter("dimension too large".into()))?;
    let values = v.values();
    let (params, payload) = match scheme {
        Scheme::None => (SchemeParams::None, v.to_le_bytes()),
        Scheme::Topk { k } => {
            if k == 0 || k as usize > dim {
                return Err(Error::Parameter(format!("top-k needs 1 <= k <= {dim}, got {k}")));
            }
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
            let mut kept = order[..k as usize].to_vec();
            kept.sort_unstable();
            let mut payload = Vec::with_capacity(12 * kept.len());
            for i in kept {
                wire::put_u32(&mut payload, i as u32);
                wire::put_f64(&mut payload, values[i]);
            }
            (SchemeParams::TopK { k }, payload)
        }
        Scheme::Quantize { bits } => {
            check_bits(bits)?;
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let top_level = (1u32 << bits) - 1;
            let step = (max - min) / f64::from(top_level);
            let levels: Vec<u32> = values
                .iter()
                .map(|&x| {
                    if step == 0.0 {
                        0
                    } else {
                        ((x - min) / step).round().clamp(0.0, f64::from(top_level)) as u32
                    }
                })
                .collect();
            (SchemeParams::Quantize { bits, min, step }, pack_levels(&levels, bits))
        }
    };
    Ok(CompressedUpdate { params, original_dim, payload })
}

pub fn decompress(c: &CompressedUpdate) -> Result<ParamVector> {
    let dim = c.original_dim as usize;
    if dim == 0 {
        return Err(Error::Decode("zero dimension".into()));
    }
    if c.payload.len() != expected_payload_len(&c.params, c.original_dim)? {
        return Err(Error::Decode("payload length does not match header".into()));
    }
    let mut r = Reader::new(&c.payload);
    let values = match c.params {
        SchemeParams::None => (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?,
        SchemeParams::TopK { k } => {
            if k as usize > dim {
                return Err(Error::Decode(format!("k = {k} exceeds dim {dim}")));
            }
            let mut out = vec![0.0; dim];
            let mut last: Option<usize> = None;
            for _ in 0..k {
                let i = r.u32()? as usize;
                let v = r.f64()?;
                if i >= dim || last.is_some_and(|l| i <= l) {
                    return Err(Error::Decode(format!("bad top-k index {i}")));
                }
                out[i] = v;
                last = Some(i);
            }
            out
        }
        SchemeParams::Quantize { bits, min, step } => {
            if !(min.is_finite() && step.is_finite() && step >= 0.0) {
                return Err(Error::Decode("invalid quantization grid".into()));
            }
            unpack_levels(&c.payload, bits, dim)
                .into_iter()
                .map(|q| min + f64::from(q) * step)
                .collect()
        }
    };
    ParamVector::new(values, 0).map_err(|e| Error::Decode(e.to_string()))
}

fn pack_levels(levels: &[u32], bits: u8) -> Vec<u8> {
    match bits {
        4 => levels
            .chunks(2)
            .map(|pair| (pair[0] as u8) | ((*pair.get(1).unwrap_or(&0) as u8) << 4))
            .collect(),
        8 => levels.iter().map(|&q| q as u8).collect(),
        _ => levels.iter().flat_map(|&q| (q as u16).to_le_bytes()).collect(),
    }
}

fn unpack_levels(payload: &[u8], bits: u8, dim: usize) -> Vec<u32> {
    match bits {
        4 => payload
            .iter()
            .flat_map(|b| [u32::from(b & 0x0f), u32::from(b >> 4)])
            .take(dim)
            .collect(),
        8 => payload.iter().map(|&b| u32::from(b)).collect(),
        _ => payload
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_le_bytes([c[0], c[1]])))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec(), 0).unwrap()
    }

    #[test]
    fn topk_single_dominant_coordinate() {
        let c = compress(&pv(&[0.1, -5.0, 2.0]), Scheme::Topk { k: 1 }).unwrap();
        assert_eq!(decompress(&c).unwrap().values(), &[0.0, -5.0, 0.0]);
    }

    #[test]
    fn topk_full_k_is_identity() {
        let v = pv(&[0.25, -1.5, 3.0, 1e-9, -7.75]);
        let c = compress(&v, Scheme::Topk { k: 5 }).unwrap();
        assert_eq!(decompress(&c).unwrap().values(), v.values());
    }

    #[test]
    fn rejects_bad_parameters() {
        let v = pv(&[1.0, 2.0]);
        assert!(matches!(compress(&v, Scheme::Topk { k: 3 }), Err(Error::Parameter(_))));
        assert!(matches!(compress(&v, Scheme::Topk { k: 0 }), Err(Error::Parameter(_))));
        assert!(matches!(compress(&v, Scheme::Quantize { bits: 7 }), Err(Error::Parameter(_))));
    }

    #[test]
    fn corrupt_payloads_are_decode_errors() {
        let v = pv(&[1.0, -2.0, 3.0, 4.0]);
        let mut c = compress(&v, Scheme::Topk { k: 2 }).unwrap();
        c.payload.pop();
        assert!(matches!(decompress(&c), Err(Error::Decode(_))));

        let mut c = compress(&v, Scheme::Topk { k: 2 }).unwrap();
        c.payload[0] = 9;
        assert!(matches!(decompress(&c), Err(Error::Decode(_))));

        let mut wire = compress(&v, Scheme::None).unwrap().to_wire();
        wire[0] = 7;
        assert!(matches!(CompressedUpdate::from_wire(&wire), Err(Error::Decode(_))));
        assert!(matches!(CompressedUpdate::from_wire(&[1, 2]), Err(Error::Decode(_))));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let c = compress(&pv(&[1.0, 2.0, 3.0]), Scheme::Topk { k: 1 }).unwrap();
        let wire = c.to_wire();
        assert_eq!(&wire[..9], &[1, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&wire[9..13], &[2, 0, 0, 0]);
        assert_eq!(&wire[13..21], &3.0f64.to_le_bytes());
        assert_eq!(CompressedUpdate::from_wire(&wire).unwrap(), c);
    }

    #[test]
    fn sizes_shrink_for_sparse_and_low_bit_schemes() {
        let v = ParamVector::new((0..40).map(|i| i as f64 * 0.1 - 2.0).collect(), 0).unwrap();
        for scheme in [
            Scheme::Topk { k: 19 },
            Scheme::Quantize { bits: 4 },
            Scheme::Quantize { bits: 8 },
            Scheme::Quantize { bits: 16 },
        ] {
            let c = compress(&v, scheme).unwrap();
            assert!(c.compressed_bytes() < c.original_bytes(), "{scheme:?}");
        }
        let none = compress(&v, Scheme::None).unwrap();
        assert_eq!(none.compressed_bytes(), none.original_bytes());
    }

    #[test]
    fn constant_vector_quantizes_exactly() {
        let v = pv(&[2.5, 2.5, 2.5]);
        let c = compress(&v, Scheme::Quantize { bits: 4 }).unwrap();
        assert_eq!(decompress(&c).unwrap().values(), v.values());
    }

    proptest! {
        #[test]
        fn none_scheme_is_byte_exact(values in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let v = pv(&values);
            let c = compress(&v, Scheme::None).unwrap();
            let back = CompressedUpdate::from_wire(&c.to_wire()).unwrap();
            prop_assert_eq!(decompress(&back).unwrap().to_le_bytes(), v.to_le_bytes());
        }

        #[test]
        fn topk_preserves_largest_magnitudes(
            values in prop::collection::vec(-100f64..100.0, 1..64),
            frac in 0.0f64..1.0,
        ) {
            let v = pv(&values);
            let k = ((values.len() as f64 * frac) as u32).max(1);
            let out = decompress(&compress(&v, Scheme::Topk { k }).unwrap()).unwrap();
            let mut mags: Vec<f64> = values.iter().map(|x| x.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            let threshold = mags[k as usize - 1];
            let mut kept = 0;
            for (o, x) in out.values().iter().zip(&values) {
                if *o != 0.0 || *x == 0.0 {
                    prop_assert!(*o == *x);
                }
                if x.abs() > threshold {
                    prop_assert!(*o == *x);
                }
                if *o != 0.0 { kept += 1; }
            }
            prop_assert!(kept <= k);
        }

        #[test]
        fn quantize_error_within_half_step(
            values in prop::collection::vec(-50f64..50.0, 1..64),
            bits in prop::sample::select(vec![4u8, 8, 16]),
        ) {
            let v = pv(&values);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let bound = (max - min) / (2.0 * ((1u32 << bits) - 1) as f64);
            let out = decompress(&compress(&v, Scheme::Quantize { bits }).unwrap()).unwrap();
            for (o, x) in out.values().iter().zip(&values) {
                prop_assert!((o - x).abs() <= bound, "{} vs {} bound {}", o, x, bound);
            }
        }
    }
}
