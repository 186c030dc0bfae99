//! Bitplane splitting, two-plane XOR prediction and the lossless backends.
//!
//! Plane 0 holds the most significant negabinary digit (bit 31) of every
//! codeword, plane 31 the least significant. Bit `i` of a plane lives in
//! byte `i / 8` at bit position `i % 8`.

use std::io::Read;

use crate::error::{Error, Result};

pub const PLANES: usize = 32;

/// Length in bytes of the fixed part of a serialized [`EncodedBlock`].
pub const BLOCK_HEADER_LEN: usize = 1 + 8 + 8 + 4;

const ZSTD_LEVEL: i32 = 3;

/// A prefix of the 32 bitplanes of a codeword array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitplaneSet {
    count: usize,
    planes: Vec<Vec<u8>>,
}

#[inline]
fn plane_bytes(count: usize) -> usize {
    count.div_ceil(8)
}

#[inline]
fn get_bit(plane: &[u8], i: usize) -> u32 {
    (plane[i / 8] >> (i % 8) & 1) as u32
}

impl BitplaneSet {
    /// Builds a set from raw planes, checking their sizes.
    pub fn from_planes(count: usize, planes: Vec<Vec<u8>>) -> Result<Self> {
        if planes.len() > PLANES {
            return Err(Error::Corrupt(format!("{} bitplanes", planes.len())));
        }
        let want = plane_bytes(count);
        if let Some(p) = planes.iter().find(|p| p.len() != want) {
            return Err(Error::Corrupt(format!(
                "bitplane of {} bytes for {count} codewords",
                p.len()
            )));
        }
        Ok(Self { count, planes })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Number of planes present, counted from the most significant.
    pub fn depth(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, p: usize) -> &[u8] {
        &self.planes[p]
    }

    pub fn planes(&self) -> &[Vec<u8>] {
        &self.planes
    }

    pub fn truncate(&mut self, depth: usize) {
        self.planes.truncate(depth);
    }

    pub fn push(&mut self, plane: Vec<u8>) -> Result<()> {
        if self.planes.len() == PLANES {
            return Err(Error::Corrupt("more than 32 bitplanes".into()));
        }
        if plane.len() != plane_bytes(self.count) {
            return Err(Error::Corrupt(format!(
                "bitplane of {} bytes for {} codewords",
                plane.len(),
                self.count
            )));
        }
        self.planes.push(plane);
        Ok(())
    }
}

pub fn split(codewords: &[u32]) -> BitplaneSet {
    let count = codewords.len();
    let mut planes = vec![vec![0u8; plane_bytes(count)]; PLANES];
    for (i, &c) in codewords.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (byte, bit) = (i / 8, i % 8);
        let mut rest = c;
        while rest != 0 {
            let b = rest.trailing_zeros() as usize;
            planes[PLANES - 1 - b][byte] |= 1 << bit;
            rest &= rest - 1;
        }
    }
    BitplaneSet { count, planes }
}

/// Reassembles codewords from planes `0..k`; the low `32 - k` digits are zero.
pub fn merge(set: &BitplaneSet, k: usize) -> Result<Vec<u32>> {
    if k > PLANES || k > set.depth() {
        return Err(Error::MissingPlanes {
            requested: k,
            available: set.depth(),
        });
    }
    let mut out = vec![0u32; set.count];
    for (p, plane) in set.planes[..k].iter().enumerate() {
        let shift = PLANES - 1 - p;
        for (byte_idx, &byte) in plane.iter().enumerate() {
            let mut rest = byte;
            while rest != 0 {
                let b = rest.trailing_zeros() as usize;
                out[byte_idx * 8 + b] |= 1 << shift;
                rest &= rest - 1;
            }
        }
    }
    Ok(out)
}

fn xor3(a: &[u8], b: Option<&[u8]>, c: Option<&[u8]>) -> Vec<u8> {
    let mut out = a.to_vec();
    for other in [b, c].into_iter().flatten() {
        for (o, x) in out.iter_mut().zip(other) {
            *o ^= x;
        }
    }
    out
}

/// Predicts every plane from the two planes above it:
/// `e[p] = b[p] ^ b[p-1] ^ b[p-2]`.
pub fn xor_encode(set: &BitplaneSet) -> BitplaneSet {
    let planes = (0..set.depth())
        .map(|p| {
            xor3(
                &set.planes[p],
                p.checked_sub(1).map(|q| set.planes[q].as_slice()),
                p.checked_sub(2).map(|q| set.planes[q].as_slice()),
            )
        })
        .collect();
    BitplaneSet {
        count: set.count,
        planes,
    }
}

/// Decodes the first `k` planes of an XOR-encoded set.
pub fn xor_decode(encoded: &BitplaneSet, k: usize) -> Result<BitplaneSet> {
    if k > encoded.depth() {
        return Err(Error::MissingPlanes {
            requested: k,
            available: encoded.depth(),
        });
    }
    let mut out = BitplaneSet {
        count: encoded.count,
        planes: Vec::with_capacity(k),
    };
    for plane in &encoded.planes[..k] {
        xor_decode_next(&mut out, plane)?;
    }
    Ok(out)
}

/// Decodes the plane following the planes already in `decoded`.
pub fn xor_decode_next(decoded: &mut BitplaneSet, encoded_plane: &[u8]) -> Result<()> {
    let p = decoded.depth();
    let plane = xor3(
        encoded_plane,
        p.checked_sub(1).map(|q| decoded.planes[q].as_slice()),
        p.checked_sub(2).map(|q| decoded.planes[q].as_slice()),
    );
    decoded.push(plane)
}

/// Empirical binary entropy (bits per bit) of the first `count` bits of a plane.
pub fn plane_entropy(plane: &[u8], count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let ones: usize = (0..count).map(|i| get_bit(plane, i) as usize).sum();
    let p = ones as f64 / count as f64;
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Lossless byte-stream coder applied to each plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backend {
    Identity,
    /// Dictionary coder with entropy stage (zstd).
    Zstd,
}

impl Backend {
    pub fn id(self) -> u8 {
        match self {
            Backend::Identity => 0,
            Backend::Zstd => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Backend::Identity),
            1 => Ok(Backend::Zstd),
            other => Err(Error::UnknownBackend(other)),
        }
    }
}

/// One independently loadable, checksummed unit of payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBlock {
    pub backend: Backend,
    pub raw_bits: u64,
    pub payload: Vec<u8>,
    pub checksum: u32,
}

impl EncodedBlock {
    pub fn raw_len(&self) -> usize {
        (self.raw_bits as usize).div_ceil(8)
    }

    pub fn serialized_len(&self) -> usize {
        BLOCK_HEADER_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.push(self.backend.id());
        out.extend_from_slice(&self.raw_bits.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.checksum.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a serialized block. The checksum is verified on decode.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < BLOCK_HEADER_LEN {
            return Err(Error::Corrupt("block shorter than its header".into()));
        }
        let backend = Backend::from_id(bytes[0])?;
        let raw_bits = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let checksum = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
        let payload = &bytes[BLOCK_HEADER_LEN..];
        if payload.len() as u64 != len {
            return Err(Error::Corrupt(format!(
                "block payload of {} bytes, header says {len}",
                payload.len()
            )));
        }
        Ok(Self {
            backend,
            raw_bits,
            payload: payload.to_vec(),
            checksum,
        })
    }
}

/// Compresses `bytes` holding `raw_bits` bits with `backend`.
pub fn backend_encode(bytes: &[u8], raw_bits: u64, backend: Backend) -> Result<EncodedBlock> {
    if (raw_bits as usize).div_ceil(8) != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{raw_bits} raw bits do not fill {} bytes",
            bytes.len()
        )));
    }
    let payload = match backend {
        Backend::Identity => bytes.to_vec(),
        Backend::Zstd if bytes.is_empty() => Vec::new(),
        Backend::Zstd => zstd::bulk::compress(bytes, ZSTD_LEVEL)?,
    };
    let checksum = crc32fast::hash(&payload);
    Ok(EncodedBlock {
        backend,
        raw_bits,
        payload,
        checksum,
    })
}

/// Zstd when it shrinks the input, identity otherwise.
pub fn backend_encode_best(bytes: &[u8], raw_bits: u64) -> Result<EncodedBlock> {
    let block = backend_encode(bytes, raw_bits, Backend::Zstd)?;
    if block.payload.len() < bytes.len() {
        Ok(block)
    } else {
        backend_encode(bytes, raw_bits, Backend::Identity)
    }
}

pub fn backend_decode(block: &EncodedBlock) -> Result<Vec<u8>> {
    let computed = crc32fast::hash(&block.payload);
    if computed != block.checksum {
        return Err(Error::ChecksumMismatch {
            stored: block.checksum,
            computed,
        });
    }
    let want = block.raw_len();
    let bytes = match block.backend {
        Backend::Identity => block.payload.clone(),
        Backend::Zstd if block.payload.is_empty() => Vec::new(),
        Backend::Zstd => {
            let mut out = Vec::with_capacity(want);
            zstd::stream::read::Decoder::new(block.payload.as_slice())?
                .take(want as u64 + 1)
                .read_to_end(&mut out)?;
            out
        }
    };
    if bytes.len() != want {
        return Err(Error::Corrupt(format!(
            "block decoded to {} bytes, expected {want}",
            bytes.len()
        )));
    }
    Ok(bytes)
}

/// Encodes a `u32` array as one block.
pub fn encode_words(words: &[u32]) -> Result<EncodedBlock> {
    let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    backend_encode_best(&bytes, bytes.len() as u64 * 8)
}

pub fn decode_words(block: &EncodedBlock) -> Result<Vec<u32>> {
    let bytes = backend_decode(block)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Corrupt("word block length not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
