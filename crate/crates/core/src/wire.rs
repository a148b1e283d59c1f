//! Bit-exact message serialization.
//!
//! Per-client record layout (all integers little-endian):
//!
//! ```text
//! header:  u16 d | u16 s | u8 level_id | f64 p        (13 bytes)
//! payload: s × ( ⌈log₂⌈d/s⌉⌉-bit coord-within-block, 1-bit value )
//!          packed LSB-first, zero-padded to a byte boundary
//! ```
//!
//! `level_id` is 0 for a standalone binary bundle and `1..=m` for the levels
//! of a multi-level bundle; a multi-level record is the concatenation of the
//! `m` per-level records in level order. The payload of one record is exactly
//! `s·(⌈log₂⌈d/s⌉⌉+1)` bits before padding; encoders report the measured bit
//! count so communication claims can be checked against real transcripts.

use crate::binary::{make_plan, Message, MessageBundle, SamplingPlan};
use crate::error::{DmeError, Result};
use crate::linf::{BudgetAllocation, LinfBundle, LinfConfig};
use crate::rr::FlipProb;

/// Append-only bit sink, LSB-first within each byte.
#[derive(Debug, Default)]
pub struct BitWriter {
    buf: Vec<u8>,
    bits_written: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write_bits(&mut self, value: u64, nbits: u32) {
        debug_assert!(nbits <= 64);
        debug_assert!(nbits == 64 || value < (1u64 << nbits));
        for i in 0..nbits {
            let bit = (value >> i) & 1;
            let pos = (self.bits_written % 8) as u8;
            if pos == 0 {
                self.buf.push(0);
            }
            if bit == 1 {
                *self.buf.last_mut().unwrap() |= 1 << pos;
            }
            self.bits_written += 1;
        }
    }

    pub fn bits_written(&self) -> u64 {
        self.bits_written
    }

    /// Byte-aligned contents.
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Bit source matching [`BitWriter`]'s layout.
pub struct BitReader<'a> {
    buf: &'a [u8],
    cursor: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        BitReader { buf, cursor: 0 }
    }

    pub fn read_bits(&mut self, nbits: u32) -> Result<u64> {
        let mut out = 0u64;
        for i in 0..nbits {
            let idx = (self.cursor / 8) as usize;
            if idx >= self.buf.len() {
                return Err(DmeError::Wire("unexpected end of payload".into()));
            }
            let pos = (self.cursor % 8) as u8;
            let bit = (self.buf[idx] >> pos) & 1;
            out |= (bit as u64) << i;
            self.cursor += 1;
        }
        Ok(out)
    }
}

const HEADER_BYTES: usize = 13;

fn encode_header(out: &mut Vec<u8>, plan: &SamplingPlan, level_id: u8, p: FlipProb) -> Result<()> {
    let d: u16 = plan
        .d
        .try_into()
        .map_err(|_| DmeError::Wire(format!("dimension {} exceeds the u16 header field", plan.d)))?;
    let s: u16 = plan
        .s
        .try_into()
        .map_err(|_| DmeError::Wire(format!("s = {} exceeds the u16 header field", plan.s)))?;
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&s.to_le_bytes());
    out.push(level_id);
    out.extend_from_slice(&p.get().to_le_bytes());
    Ok(())
}

fn decode_header(bytes: &[u8]) -> Result<(SamplingPlan, u8, FlipProb)> {
    if bytes.len() < HEADER_BYTES {
        return Err(DmeError::Wire("truncated header".into()));
    }
    let d = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
    let s = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
    let level_id = bytes[4];
    let p = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let plan = make_plan(d, s).map_err(|e| DmeError::Wire(format!("bad header: {e}")))?;
    let p = FlipProb::new(p).map_err(|e| DmeError::Wire(format!("bad header: {e}")))?;
    Ok((plan, level_id, p))
}

/// Serialize one bundle. Returns the bytes and the exact payload bit count
/// (before byte padding) as measured by the packer.
pub fn encode_bundle(bundle: &MessageBundle, level_id: u8) -> Result<(Vec<u8>, u64)> {
    let plan = &bundle.plan;
    if bundle.messages.len() != plan.s {
        return Err(DmeError::Wire(format!(
            "bundle has {} messages, plan requires {}",
            bundle.messages.len(),
            plan.s
        )));
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + plan.payload_bits().div_ceil(8) as usize);
    encode_header(&mut out, plan, level_id, bundle.p)?;

    let cbits = plan.coord_bits();
    let mut writer = BitWriter::new();
    for (j, msg) in bundle.messages.iter().enumerate() {
        let block_start = (j * plan.a) as u32;
        if plan.block_of(msg.coord) != j {
            return Err(DmeError::Wire(format!(
                "message {j} carries coordinate {} outside its block",
                msg.coord
            )));
        }
        writer.write_bits((msg.coord - block_start) as u64, cbits);
        writer.write_bits(msg.value_bit as u64, 1);
    }
    let payload_bits = writer.bits_written();
    out.extend_from_slice(&writer.into_bytes());
    Ok((out, payload_bits))
}

/// Deserialize one bundle; returns it with its level id and the number of
/// bytes consumed (so records can be concatenated).
pub fn decode_bundle(bytes: &[u8]) -> Result<(MessageBundle, u8, usize)> {
    let (plan, level_id, p) = decode_header(bytes)?;
    let payload_bytes = plan.payload_bits().div_ceil(8) as usize;
    let total = HEADER_BYTES + payload_bytes;
    if bytes.len() < total {
        return Err(DmeError::Wire("truncated payload".into()));
    }
    let mut reader = BitReader::new(&bytes[HEADER_BYTES..total]);
    let cbits = plan.coord_bits();
    let mut messages = Vec::with_capacity(plan.s);
    for j in 0..plan.s {
        let offset = reader.read_bits(cbits)?;
        if offset >= plan.a as u64 {
            return Err(DmeError::Wire(format!(
                "coordinate offset {offset} outside block of size {}",
                plan.a
            )));
        }
        let value_bit = reader.read_bits(1)? == 1;
        messages.push(Message {
            coord: (j * plan.a) as u32 + offset as u32,
            value_bit,
        });
    }
    Ok((
        MessageBundle {
            messages,
            plan,
            p,
        },
        level_id,
        total,
    ))
}

/// Serialize a multi-level bundle as `m` concatenated level records with
/// level ids `1..=m`. Returns bytes and the summed measured payload bits.
pub fn encode_linf_bundle(bundle: &LinfBundle) -> Result<(Vec<u8>, u64)> {
    let mut out = Vec::new();
    let mut bits = 0u64;
    for (k, level) in bundle.per_level.iter().enumerate() {
        let id: u8 = (k + 1)
            .try_into()
            .map_err(|_| DmeError::Wire("more than 255 levels".into()))?;
        let (bytes, b) = encode_bundle(level, id)?;
        out.extend_from_slice(&bytes);
        bits += b;
    }
    Ok((out, bits))
}

/// Deserialize a multi-level bundle produced by [`encode_linf_bundle`],
/// checking it against the expected configuration.
pub fn decode_linf_bundle(
    bytes: &[u8],
    cfg: &LinfConfig,
    alloc: &BudgetAllocation,
) -> Result<(LinfBundle, usize)> {
    let mut per_level = Vec::with_capacity(cfg.m);
    let mut cursor = 0usize;
    for k in 0..cfg.m {
        let (bundle, level_id, used) = decode_bundle(&bytes[cursor..])?;
        if level_id as usize != k + 1 {
            return Err(DmeError::Wire(format!(
                "expected level {} record, found level {level_id}",
                k + 1
            )));
        }
        if bundle.plan != cfg.plan() {
            return Err(DmeError::Wire("level plan disagrees with config".into()));
        }
        if bundle.p != alloc.p_k[k] {
            return Err(DmeError::Wire(
                "level flip probability disagrees with allocation".into(),
            ));
        }
        cursor += used;
        per_level.push(bundle);
    }
    Ok((LinfBundle { per_level }, cursor))
}
