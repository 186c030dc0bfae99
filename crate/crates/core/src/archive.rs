//! On-disk container: header, per-level index and block payload.
//!
//! ```text
//! "IPC1" | version u16 | scalar u8 | interp u8 | ndims u8 | pad[3]
//! dims: ndims x u64 | eb f64 | L u8 | L_p u8 | anchor cap u8 | pad u8
//! value min f64 | value max f64 | payload length u64
//! per level L..1:
//!     count u64 | delta 33 x f64 | outliers (offset u64, len u64, count u64)
//!     32 x plane (offset u64, len u64)
//! index crc32 u32
//! payload
//! ```
//!
//! Integers are little-endian, offsets are relative to the payload start
//! and blocks are laid out level-major (coarsest first), outliers before
//! planes 0..31. A plane with length 0 is all zero after XOR prediction
//! and occupies no payload.

use std::io::{Read, Seek, SeekFrom, Write};

use crate::bpcodec::{EncodedBlock, BLOCK_HEADER_LEN, PLANES};
use crate::error::{Error, Result};
use crate::grid::{validate_dims, MAX_DIMS};
use crate::predictor::InterpKind;
use crate::scalar::ScalarKind;

pub const MAGIC: &[u8; 4] = b"IPC1";
pub const VERSION: u16 = 1;
pub const DELTA_LEN: usize = PLANES + 1;

const LEVEL_RECORD_LEN: usize = 8 + DELTA_LEN * 8 + 3 * 8 + PLANES * 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveHeader {
    pub scalar: ScalarKind,
    pub interp: InterpKind,
    pub dims: Vec<usize>,
    pub eb: f64,
    pub levels: u8,
    /// First progressive level; levels above it are always fully loaded.
    pub progressive_from: u8,
    /// Log2 of the largest allowed anchor stride.
    pub anchor_cap: u8,
    pub value_min: f64,
    pub value_max: f64,
    pub payload_len: u64,
}

impl ArchiveHeader {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_range(&self) -> f64 {
        self.value_max - self.value_min
    }

    pub fn original_size(&self) -> u64 {
        (self.len() * self.scalar.width()) as u64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockRef {
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord {
    pub count: u64,
    /// `delta[d]`: largest deviation of this level's reconstruction when its
    /// `d` least significant planes are dropped and coarser levels are exact.
    pub delta: [f64; DELTA_LEN],
    pub outliers: BlockRef,
    pub outlier_count: u64,
    pub planes: [BlockRef; PLANES],
}

impl LevelRecord {
    /// Payload bytes needed to decode the top `k` planes plus the outliers.
    pub fn loaded_size(&self, k: usize) -> u64 {
        self.outliers.len + self.planes[..k].iter().map(|b| b.len).sum::<u64>()
    }
}

/// Header plus level records; everything needed to plan a retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveIndex {
    pub header: ArchiveHeader,
    /// Indexed by `level - 1`.
    pub levels: Vec<LevelRecord>,
    /// CRC-32 of the serialized header and index; identifies the archive.
    pub crc: u32,
    /// Byte offset of the payload within the archive.
    pub payload_start: u64,
}

impl ArchiveIndex {
    pub fn level(&self, level: u32) -> &LevelRecord {
        &self.levels[level as usize - 1]
    }

    /// Size of a complete archive in bytes.
    pub fn total_size(&self) -> u64 {
        self.payload_start + self.header.payload_len
    }
}

/// Blocks of one level handed to [`write_archive`].
#[derive(Clone, Debug, PartialEq)]
pub struct LevelBlocks {
    pub count: u64,
    pub delta: [f64; DELTA_LEN],
    pub outlier_count: u64,
    pub outliers: Option<EncodedBlock>,
    /// Exactly 32 entries; `None` for an all-zero plane.
    pub planes: Vec<Option<EncodedBlock>>,
}

/// Number of planes each level loads, indexed by `level - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalPlan {
    pub planes: Vec<u8>,
    /// Payload bytes the plan loads.
    pub bytes: u64,
    /// Estimated worst-case point-wise error.
    pub bound: f64,
}

impl RetrievalPlan {
    pub fn full(index: &ArchiveIndex) -> Self {
        let planes = vec![PLANES as u8; index.levels.len()];
        let bytes = plan_bytes(index, &planes);
        Self {
            planes,
            bytes,
            bound: index.header.eb,
        }
    }

    pub fn loaded(&self, level: u32) -> usize {
        self.planes[level as usize - 1] as usize
    }

    pub fn validate(&self, index: &ArchiveIndex) -> Result<()> {
        validate_planes(index, &self.planes)
    }

    /// `true` if every level loads at least as many planes as in `other`.
    pub fn contains(&self, other: &[u8]) -> bool {
        self.planes.len() == other.len() && self.planes.iter().zip(other).all(|(a, b)| a >= b)
    }
}

pub fn validate_planes(index: &ArchiveIndex, planes: &[u8]) -> Result<()> {
    if planes.len() != index.levels.len() {
        return Err(Error::InvalidPlan(format!(
            "{} levels in plan, {} in archive",
            planes.len(),
            index.levels.len()
        )));
    }
    let lp = index.header.progressive_from as usize;
    for (i, &k) in planes.iter().enumerate() {
        if k as usize > PLANES {
            return Err(Error::InvalidPlan(format!("level {} loads {k} planes", i + 1)));
        }
        if i + 1 > lp && k as usize != PLANES {
            return Err(Error::InvalidPlan(format!(
                "non-progressive level {} must load all planes",
                i + 1
            )));
        }
    }
    Ok(())
}

pub fn plan_bytes(index: &ArchiveIndex, planes: &[u8]) -> u64 {
    index
        .levels
        .iter()
        .zip(planes)
        .map(|(rec, &k)| rec.loaded_size(k as usize))
        .sum()
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_index(header: &ArchiveHeader, levels: &[LevelRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + levels.len() * LEVEL_RECORD_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(header.scalar.id());
    out.push(header.interp.id());
    out.push(header.dims.len() as u8);
    out.extend_from_slice(&[0; 3]);
    for &d in &header.dims {
        put_u64(&mut out, d as u64);
    }
    put_f64(&mut out, header.eb);
    out.extend_from_slice(&[header.levels, header.progressive_from, header.anchor_cap, 0]);
    put_f64(&mut out, header.value_min);
    put_f64(&mut out, header.value_max);
    put_u64(&mut out, header.payload_len);
    for rec in levels.iter().rev() {
        put_u64(&mut out, rec.count);
        for &d in &rec.delta {
            put_f64(&mut out, d);
        }
        put_u64(&mut out, rec.outliers.offset);
        put_u64(&mut out, rec.outliers.len);
        put_u64(&mut out, rec.outlier_count);
        for b in &rec.planes {
            put_u64(&mut out, b.offset);
            put_u64(&mut out, b.len);
        }
    }
    out
}

/// Lays out `levels` (indexed by `level - 1`) and writes the archive.
/// `header.payload_len` is filled in from the blocks.
pub fn write_archive<W: Write>(
    w: &mut W,
    mut header: ArchiveHeader,
    levels: &[LevelBlocks],
) -> Result<ArchiveIndex> {
    if levels.len() != header.levels as usize {
        return Err(Error::Corrupt(format!(
            "{} level payloads for {} levels",
            levels.len(),
            header.levels
        )));
    }
    let mut offset = 0u64;
    let mut place = |block: &Option<EncodedBlock>| -> BlockRef {
        match block {
            Some(b) => {
                let r = BlockRef {
                    offset,
                    len: b.serialized_len() as u64,
                };
                offset += r.len;
                r
            }
            None => BlockRef { offset, len: 0 },
        }
    };
    let mut records = vec![None; levels.len()];
    for (i, lv) in levels.iter().enumerate().rev() {
        if lv.planes.len() != PLANES {
            return Err(Error::Corrupt(format!("{} planes in level payload", lv.planes.len())));
        }
        let outliers = place(&lv.outliers);
        let mut planes = [BlockRef::default(); PLANES];
        for (slot, block) in planes.iter_mut().zip(&lv.planes) {
            *slot = place(block);
        }
        records[i] = Some(LevelRecord {
            count: lv.count,
            delta: lv.delta,
            outliers,
            outlier_count: lv.outlier_count,
            planes,
        });
    }
    let records: Vec<LevelRecord> = records.into_iter().map(Option::unwrap).collect();
    header.payload_len = offset;

    let index_bytes = encode_index(&header, &records);
    let crc = crc32fast::hash(&index_bytes);
    w.write_all(&index_bytes)?;
    w.write_all(&crc.to_le_bytes())?;
    for lv in levels.iter().rev() {
        for block in std::iter::once(&lv.outliers).chain(&lv.planes).flatten() {
            w.write_all(&block.to_bytes())?;
        }
    }
    w.flush()?;
    Ok(ArchiveIndex {
        header,
        levels: records,
        crc,
        payload_start: index_bytes.len() as u64 + 4,
    })
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    seen: Vec<u8>,
}

impl<R: Read> Cursor<'_, R> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let start = self.seen.len();
        self.seen.resize(start + n, 0);
        self.inner.read_exact(&mut self.seen[start..]).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Corrupt("archive index is truncated".into())
            } else {
                Error::Io(e)
            }
        })?;
        Ok(&self.seen[start..])
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads the header and index from the start of `r`, leaving the payload
/// untouched.
pub fn read_header<R: Read>(r: &mut R) -> Result<ArchiveIndex> {
    let mut c = Cursor {
        inner: r,
        seen: Vec::new(),
    };
    if c.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let scalar_id = c.u8()?;
    let scalar = ScalarKind::from_id(scalar_id)
        .ok_or_else(|| Error::Corrupt(format!("scalar kind {scalar_id}")))?;
    let interp_id = c.u8()?;
    let interp = InterpKind::from_id(interp_id)
        .ok_or_else(|| Error::Corrupt(format!("interpolation kind {interp_id}")))?;
    let ndims = c.u8()? as usize;
    c.take(3)?;
    if ndims == 0 || ndims > MAX_DIMS {
        return Err(Error::Corrupt(format!("{ndims} dimensions")));
    }
    let dims = (0..ndims)
        .map(|_| c.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    validate_dims(&dims).map_err(|e| Error::Corrupt(e.to_string()))?;
    let eb = c.f64()?;
    let levels = c.u8()?;
    let progressive_from = c.u8()?;
    let anchor_cap = c.u8()?;
    c.u8()?;
    let value_min = c.f64()?;
    let value_max = c.f64()?;
    let payload_len = c.u64()?;
    if !(eb > 0.0 && eb.is_finite()) {
        return Err(Error::Corrupt(format!("error bound {eb}")));
    }
    if levels == 0 || progressive_from == 0 || progressive_from > levels {
        return Err(Error::Corrupt(format!(
            "levels {levels}, first progressive level {progressive_from}"
        )));
    }
    if levels as u32 != crate::grid::level_count(&dims, anchor_cap) {
        return Err(Error::Corrupt("level count does not match shape".into()));
    }
    let mut records = Vec::with_capacity(levels as usize);
    for _ in 0..levels {
        let count = c.u64()?;
        let mut delta = [0.0; DELTA_LEN];
        for d in delta.iter_mut() {
            *d = c.f64()?;
        }
        let outliers = BlockRef {
            offset: c.u64()?,
            len: c.u64()?,
        };
        let outlier_count = c.u64()?;
        let mut planes = [BlockRef::default(); PLANES];
        for p in planes.iter_mut() {
            *p = BlockRef {
                offset: c.u64()?,
                len: c.u64()?,
            };
        }
        records.push(LevelRecord {
            count,
            delta,
            outliers,
            outlier_count,
            planes,
        });
    }
    records.reverse();
    let computed = crc32fast::hash(&c.seen);
    let payload_start = c.seen.len() as u64 + 4;
    let stored = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    for (i, rec) in records.iter().enumerate() {
        let blocks = std::iter::once(&rec.outliers).chain(&rec.planes);
        for b in blocks {
            if b.offset.checked_add(b.len).map_or(true, |end| end > payload_len) {
                return Err(Error::Corrupt(format!("level {} block outside payload", i + 1)));
            }
            if b.len != 0 && b.len < BLOCK_HEADER_LEN as u64 {
                return Err(Error::Corrupt(format!("level {} block too short", i + 1)));
            }
        }
        if rec.delta[0] != 0.0 || rec.delta.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Corrupt(format!("level {} delta table not monotone", i + 1)));
        }
    }
    Ok(ArchiveIndex {
        header: ArchiveHeader {
            scalar,
            interp,
            dims,
            eb,
            levels,
            progressive_from,
            anchor_cap,
            value_min,
            value_max,
            payload_len,
        },
        levels: records,
        crc: stored,
        payload_start,
    })
}

/// Encoded blocks of one level fetched by a read.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedLevel {
    pub level: u32,
    /// Index of the first plane in `planes`.
    pub first_plane: usize,
    /// `None` marks an all-zero encoded plane.
    pub planes: Vec<Option<EncodedBlock>>,
    pub outliers: Option<EncodedBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedBlocks {
    /// Indexed by `level - 1`.
    pub levels: Vec<LoadedLevel>,
    pub bytes_read: u64,
}

fn read_block<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    block: BlockRef,
) -> Result<Option<EncodedBlock>> {
    if block.len == 0 {
        return Ok(None);
    }
    if block.offset + block.len > index.header.payload_len {
        return Err(Error::Corrupt("block offset outside payload".into()));
    }
    r.seek(SeekFrom::Start(index.payload_start + block.offset))?;
    let mut buf = vec![0u8; block.len as usize];
    r.read_exact(&mut buf)?;
    let parsed = EncodedBlock::from_bytes(&buf)?;
    let computed = crc32fast::hash(&parsed.payload);
    if computed != parsed.checksum {
        return Err(Error::ChecksumMismatch {
            stored: parsed.checksum,
            computed,
        });
    }
    Ok(Some(parsed))
}

/// Reads exactly the blocks `plan` needs.
pub fn read_blocks<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    plan: &RetrievalPlan,
) -> Result<LoadedBlocks> {
    read_increment(r, index, None, &plan.planes)
}

/// Reads the planes loaded by `to` but not by `from`. Outlier blocks are
/// only read when there is no earlier load.
pub fn read_increment<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    from: Option<&[u8]>,
    to: &[u8],
) -> Result<LoadedBlocks> {
    validate_planes(index, to)?;
    if let Some(from) = from {
        validate_planes(index, from)?;
        if from.iter().zip(to).any(|(a, b)| a > b) {
            return Err(Error::InvalidPlan("refinement drops loaded planes".into()));
        }
    }
    let mut bytes_read = 0;
    let mut levels = Vec::with_capacity(to.len());
    for (i, rec) in index.levels.iter().enumerate() {
        let start = from.map_or(0, |f| f[i] as usize);
        let end = to[i] as usize;
        let outliers = if from.is_none() {
            bytes_read += rec.outliers.len;
            read_block(r, index, rec.outliers)?
        } else {
            None
        };
        let mut planes = Vec::with_capacity(end - start);
        for b in &rec.planes[start..end] {
            bytes_read += b.len;
            planes.push(read_block(r, index, *b)?);
        }
        levels.push(LoadedLevel {
            level: i as u32 + 1,
            first_plane: start,
            planes,
            outliers,
        });
    }
    Ok(LoadedBlocks { levels, bytes_read })
}

/// Reads one serialized [`EncodedBlock`] from a stream.
pub(crate) fn read_encoded_block<R: Read>(r: &mut R) -> Result<EncodedBlock> {
    let mut head = [0u8; BLOCK_HEADER_LEN];
    r.read_exact(&mut head)?;
    let len = u64::from_le_bytes(head[9..17].try_into().unwrap());
    let mut buf = head.to_vec();
    buf.resize(BLOCK_HEADER_LEN + len as usize, 0);
    r.read_exact(&mut buf[BLOCK_HEADER_LEN..])?;
    EncodedBlock::from_bytes(&buf)
}
