//! Flit codecs: bundled AER (row-aligned multi-spike flits) and legacy
//! per-spike AER packets.
//!
//! Wire layout of a bundled flit, LSB-first bit packing:
//!
//! ```text
//! bits 0..3    m hop count        (3)
//! bits 3..6    n hop count        (3)
//! bits 6..8    type               (2)   beginning / body / ending
//! bits 8..20   spine/token id     (12)
//! ...          payload slots      (13 each: 12-bit position + 1 sign bit)
//! last-15..-10 occupancy          (5)
//! last-10..0   check              (10)  folded CRC-15/CAN
//! ```
//!
//! With the reference 256-bit flit this gives 17 payload slots; the default
//! header + check overhead is 35 bits for every flit size. Position 0 is a
//! legal spike address, so padded slots are discriminated by the occupancy
//! count rather than by sentinel values.

use crate::error::{Result, SimError};

pub const BAER_HEADER_BITS: u32 = 3 + 3 + 2 + 12;
pub const BAER_OCCUPANCY_BITS: u32 = 5;
pub const BAER_CHECK_BITS: u32 = 10;
pub const BAER_SLOT_BITS: u32 = 13;
pub const BAER_OVERHEAD_BITS: u32 = BAER_HEADER_BITS + BAER_OCCUPANCY_BITS + BAER_CHECK_BITS;

/// Bits of one legacy AER packet: 12-bit spine/token id, 12-bit position,
/// 1-bit sign. One spike per packet.
pub const AER_PACKET_BITS: u64 = 25;

/// Payload slots available at a given flit size, capped by the 5-bit
/// occupancy field.
pub fn slots_per_flit(flit_bits: u32) -> usize {
    if flit_bits <= BAER_OVERHEAD_BITS {
        return 0;
    }
    (((flit_bits - BAER_OVERHEAD_BITS) / BAER_SLOT_BITS) as usize).min(31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlitType {
    Body,
    Beginning,
    Ending,
}

impl FlitType {
    fn to_bits(self) -> u64 {
        match self {
            FlitType::Body => 0,
            FlitType::Beginning => 1,
            FlitType::Ending => 2,
        }
    }

    fn from_bits(b: u64) -> Result<Self> {
        match b {
            0 => Ok(FlitType::Body),
            1 => Ok(FlitType::Beginning),
            2 => Ok(FlitType::Ending),
            _ => Err(SimError::Parse("invalid flit type".into())),
        }
    }
}

/// A decoded bundled-AER flit. All payload spikes share the spine/token id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaerFlit {
    pub hop_m: u32,
    pub hop_n: u32,
    pub flit_type: FlitType,
    pub st_id: u32,
    /// Occupied slots only: (position, sign).
    pub spikes: Vec<(u32, i8)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AerPacket {
    pub st_id: u32,
    pub position: u32,
    pub sign: i8,
}

impl AerPacket {
    /// Packs the 25-bit legacy layout (st_id 12, position 12, sign 1),
    /// LSB-first, into 4 bytes.
    pub fn pack(&self) -> [u8; 4] {
        let bits: u32 = (self.st_id & 0xFFF)
            | ((self.position & 0xFFF) << 12)
            | (u32::from(self.sign < 0) << 24);
        bits.to_le_bytes()
    }

    pub fn unpack(bytes: [u8; 4]) -> Result<AerPacket> {
        let bits = u32::from_le_bytes(bytes);
        if bits >> 25 != 0 {
            return Err(SimError::Parse("stray bits beyond the 25-bit packet".into()));
        }
        Ok(AerPacket {
            st_id: bits & 0xFFF,
            position: (bits >> 12) & 0xFFF,
            sign: if (bits >> 24) & 1 == 1 { -1 } else { 1 },
        })
    }
}

/// CRC-15/CAN, polynomial 0x4599, over a little-endian bit stream.
fn crc15(bits: &[u8], n_bits: usize) -> u16 {
    const POLY: u16 = 0x4599;
    let mut crc: u16 = 0;
    for i in 0..n_bits {
        let bit = (bits[i / 8] >> (i % 8)) & 1;
        let msb = ((crc >> 14) & 1) as u8;
        crc = (crc << 1) & 0x7FFF;
        if msb ^ bit == 1 {
            crc ^= POLY;
        }
    }
    crc
}

/// Folded 10-bit check so every syndrome bit of the CRC-15 lands somewhere.
fn fold_check(crc: u16) -> u64 {
    ((crc ^ (crc >> 5)) & 0x3FF) as u64
}

struct BitWriter {
    bytes: Vec<u8>,
    pos: usize,
}

impl BitWriter {
    fn new(n_bits: u32) -> Self {
        BitWriter {
            bytes: vec![0; (n_bits as usize).div_ceil(8)],
            pos: 0,
        }
    }

    fn put(&mut self, value: u64, width: u32) {
        for k in 0..width as usize {
            if (value >> k) & 1 == 1 {
                self.bytes[(self.pos + k) / 8] |= 1 << ((self.pos + k) % 8);
            }
        }
        self.pos += width as usize;
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn get(&mut self, width: u32) -> u64 {
        let mut v = 0u64;
        for k in 0..width as usize {
            let bit = (self.bytes[(self.pos + k) / 8] >> ((self.pos + k) % 8)) & 1;
            v |= (bit as u64) << k;
        }
        self.pos += width as usize;
        v
    }
}

impl BaerFlit {
    /// Packs to the exact wire layout at the given flit size.
    pub fn pack(&self, flit_bits: u32) -> Vec<u8> {
        let slots = slots_per_flit(flit_bits);
        assert!(self.spikes.len() <= slots, "flit overfull for size");
        let mut w = BitWriter::new(flit_bits);
        w.put(self.hop_m as u64, 3);
        w.put(self.hop_n as u64, 3);
        w.put(self.flit_type.to_bits(), 2);
        w.put(self.st_id as u64, 12);
        for i in 0..slots {
            if let Some(&(pos, sign)) = self.spikes.get(i) {
                w.put(pos as u64, 12);
                w.put(u64::from(sign < 0), 1);
            } else {
                w.put(0, 13); // zero padding
            }
        }
        w.put(self.spikes.len() as u64, BAER_OCCUPANCY_BITS);
        // Residual layout bits stay zero; the check always sits at the end.
        let covered = (flit_bits - BAER_CHECK_BITS) as usize;
        debug_assert!(w.pos <= covered);
        w.pos = covered;
        let crc = crc15(&w.bytes, covered);
        w.put(fold_check(crc), BAER_CHECK_BITS);
        debug_assert_eq!(w.pos as u32, flit_bits);
        w.bytes
    }

    /// Inverse of `pack`. Validates the check field and drops padded slots.
    pub fn unpack(bytes: &[u8], flit_bits: u32) -> Result<BaerFlit> {
        let slots = slots_per_flit(flit_bits);
        let covered = (flit_bits - BAER_CHECK_BITS) as usize;
        let stored = {
            let mut r = BitReader { bytes, pos: covered };
            r.get(BAER_CHECK_BITS)
        };
        if fold_check(crc15(bytes, covered)) != stored {
            return Err(SimError::ChecksumMismatch);
        }
        let mut r = BitReader { bytes, pos: 0 };
        let hop_m = r.get(3) as u32;
        let hop_n = r.get(3) as u32;
        let flit_type = FlitType::from_bits(r.get(2))?;
        let st_id = r.get(12) as u32;
        let mut raw = Vec::with_capacity(slots);
        for _ in 0..slots {
            let pos = r.get(12) as u32;
            let sign = if r.get(1) == 1 { -1i8 } else { 1i8 };
            raw.push((pos, sign));
        }
        let occupancy = r.get(BAER_OCCUPANCY_BITS) as usize;
        if occupancy > slots {
            return Err(SimError::Parse("flit occupancy exceeds slot count".into()));
        }
        raw.truncate(occupancy);
        Ok(BaerFlit {
            hop_m,
            hop_n,
            flit_type,
            st_id,
            spikes: raw,
        })
    }
}

/// Bundles one row's spikes into flits. Emits `ceil(k / slots)` flits; the
/// first is `Beginning`, the last `Ending`, and a single flit is `Ending`
/// (the decoder treats `Ending` as the flush marker). Zero spikes encode to
/// zero flits; completion signalling for silent rows is the transport's job.
pub fn encode_baer(
    st_id: u32,
    spikes: &[(u32, i8)],
    dest: (u32, u32),
    flit_bits: u32,
) -> Result<Vec<BaerFlit>> {
    if dest.0 > 7 || dest.1 > 7 {
        return Err(SimError::HopOverflow {
            m: dest.0,
            n: dest.1,
        });
    }
    for &(pos, _) in spikes {
        if pos >= 1 << 12 {
            return Err(SimError::PositionOverflow(pos));
        }
    }
    if st_id >= 1 << 12 {
        return Err(SimError::PositionOverflow(st_id));
    }
    let slots = slots_per_flit(flit_bits);
    if slots == 0 {
        return Err(SimError::Parse(format!(
            "flit size {flit_bits} leaves no payload slots"
        )));
    }
    let n_flits = spikes.len().div_ceil(slots);
    let mut out = Vec::with_capacity(n_flits);
    for (idx, chunk) in spikes.chunks(slots).enumerate() {
        let flit_type = if idx + 1 == n_flits {
            FlitType::Ending
        } else if idx == 0 {
            FlitType::Beginning
        } else {
            FlitType::Body
        };
        out.push(BaerFlit {
            hop_m: dest.0,
            hop_n: dest.1,
            flit_type,
            st_id,
            spikes: chunk.to_vec(),
        });
    }
    Ok(out)
}

/// Concatenated decode of a flit sequence produced by `encode_baer`.
pub fn decode_baer(flits: &[BaerFlit]) -> (u32, Vec<(u32, i8)>) {
    let st_id = flits.first().map_or(0, |f| f.st_id);
    let spikes = flits.iter().flat_map(|f| f.spikes.iter().copied()).collect();
    (st_id, spikes)
}

/// Wire bits for a spike bundle under each encoding.
pub fn baer_wire_bits(n_spikes: usize, flit_bits: u32) -> u64 {
    let slots = slots_per_flit(flit_bits);
    (n_spikes.div_ceil(slots.max(1)) as u64) * flit_bits as u64
}

pub fn legacy_wire_bits(n_spikes: usize) -> u64 {
    n_spikes as u64 * AER_PACKET_BITS
}
