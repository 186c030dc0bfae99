//! Compression and the two retrieval paths.
//!
//! Compression walks the levels coarse to fine, predicting each point from
//! the already *reconstructed* coarser data so the decoder sees identical
//! predictions, quantizes the residual, and stores every level as 32
//! independently loadable bitplane blocks together with its measured loss
//! table.
//!
//! Retrieval decodes whatever prefix of planes a plan names and rebuilds
//! the field in one coarse-to-fine sweep. Refinement loads only the planes
//! that were not loaded before and rebuilds the progressive levels starting
//! at the coarsest one whose codes changed.

use std::io::{Read, Seek, Write};

use rayon::prelude::*;

use crate::archive::{
    read_blocks, read_encoded_block, read_increment, write_archive, ArchiveHeader, ArchiveIndex,
    LevelBlocks, LoadedLevel, RetrievalPlan, DELTA_LEN,
};
use crate::bpcodec::{
    backend_decode, backend_encode_best, decode_words, encode_words, merge, split,
    xor_decode_next, xor_encode, BitplaneSet, EncodedBlock, PLANES,
};
use crate::error::{Error, Result};
use crate::grid::{Field, FieldGrid, LevelDecomposition, DEFAULT_ANCHOR_CAP};
use crate::predictor::{predict_pass_mut, InterpKind};
use crate::quantizer::{dequantize, from_negabinary, quantize, Quantized, QuantizedLevel};
use crate::scalar::Scalar;

pub const SESSION_MAGIC: &[u8; 4] = b"IPS1";

#[derive(Clone, Debug, PartialEq)]
pub struct CompressOptions {
    /// Absolute point-wise error bound.
    pub eb: f64,
    pub interp: InterpKind,
    /// First progressive level; `None` makes every level progressive.
    pub progressive_from: Option<u32>,
    /// Log2 of the largest anchor stride.
    pub anchor_cap: u8,
}

impl CompressOptions {
    pub fn new(eb: f64) -> Self {
        Self {
            eb,
            interp: InterpKind::Cubic,
            progressive_from: None,
            anchor_cap: DEFAULT_ANCHOR_CAP,
        }
    }

    pub fn interp(mut self, interp: InterpKind) -> Self {
        self.interp = interp;
        self
    }

    pub fn progressive_from(mut self, level: u32) -> Self {
        self.progressive_from = Some(level);
        self
    }
}

/// Quantizes `grid` level by level, returning the codes of every level
/// (indexed by `level - 1`) and the encoder's reconstruction.
pub fn decorrelate<T: Scalar>(
    grid: &FieldGrid<T>,
    decomposition: &LevelDecomposition,
    eb: f64,
    kind: InterpKind,
) -> Result<(Vec<QuantizedLevel>, Vec<T>)> {
    if !(eb > 0.0 && eb.is_finite()) {
        return Err(Error::InvalidErrorBound(eb));
    }
    let x = grid.values();
    let mut recon = vec![T::zero(); x.len()];
    let mut levels = Vec::with_capacity(decomposition.levels() as usize);
    for l in (1..=decomposition.levels()).rev() {
        let mut codes = Vec::with_capacity(decomposition.level_len(l)?);
        let mut outliers = Vec::new();
        for pass in decomposition.passes(l)? {
            let first = codes.len();
            predict_pass_mut(&mut recon, decomposition, &pass, kind, first, |vals, ord, idx, pred| {
                let xv = x[idx];
                if let Quantized::Code(q) = quantize((xv - pred).widen(), eb) {
                    let r = pred + T::from_f64(dequantize(q as i64, eb));
                    if r.is_finite() && (xv.widen() - r.widen()).abs() <= eb {
                        vals[idx] = r;
                        codes.push(q);
                        return;
                    }
                }
                vals[idx] = xv;
                codes.push(0);
                outliers.push((ord as u64, xv.widen()));
            });
        }
        levels.push(QuantizedLevel {
            level: l,
            codes,
            outliers,
            eb,
        });
    }
    levels.reverse();
    Ok((levels, recon))
}

/// Largest deviation of a level's reconstruction when its `d` lowest
/// planes are dropped and all coarser levels are exact, for `d = 0..=32`.
///
/// The deviation is propagated through the level's own passes, since a
/// later pass predicts from points of earlier passes. The table is made
/// non-decreasing by a running maximum.
pub fn measure_level_loss(
    decomposition: &LevelDecomposition,
    level: &QuantizedLevel,
    kind: InterpKind,
) -> Result<[f64; DELTA_LEN]> {
    let passes = decomposition.passes(level.level)?;
    let mask = level.outlier_mask();
    let words = level.negabinary_codes();
    let used_digits = words.iter().fold(0u32, |acc, &w| acc | w);
    let n = decomposition.len();

    let measured: Vec<(usize, f64)> = (1..=PLANES)
        .filter(|&d| used_digits >> (d - 1) & 1 == 1)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map_init(
            || vec![0f64; n],
            |scratch, d| {
                let keep = if d == PLANES { 0 } else { u32::MAX << d };
                let mut worst = 0f64;
                let mut first = 0;
                for pass in &passes {
                    predict_pass_mut(scratch, decomposition, pass, kind, first, |vals, ord, idx, pred| {
                        let v = if mask[ord] {
                            0.0
                        } else {
                            let w = words[ord];
                            let lost = from_negabinary(w) - from_negabinary(w & keep);
                            pred + dequantize(lost, level.eb)
                        };
                        vals[idx] = v;
                        worst = worst.max(v.abs());
                    });
                    first += pass.len();
                }
                for pass in &passes {
                    pass.for_each(|idx, _| scratch[idx] = 0.0);
                }
                (d, worst)
            },
        )
        .collect();

    let mut delta = [0f64; DELTA_LEN];
    for (d, v) in measured {
        delta[d] = v;
    }
    for d in 1..DELTA_LEN {
        delta[d] = delta[d].max(delta[d - 1]);
    }
    Ok(delta)
}

fn encode_outliers(outliers: &[(u64, f64)]) -> Result<Option<EncodedBlock>> {
    if outliers.is_empty() {
        return Ok(None);
    }
    let mut bytes = Vec::with_capacity(outliers.len() * 16);
    for &(o, v) in outliers {
        bytes.extend_from_slice(&o.to_le_bytes());
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    backend_encode_best(&bytes, bytes.len() as u64 * 8).map(Some)
}

fn decode_outliers(block: &EncodedBlock, count: u64, level_len: usize) -> Result<Vec<(u64, f64)>> {
    let bytes = backend_decode(block)?;
    if bytes.len() as u64 != count * 16 {
        return Err(Error::Corrupt(format!(
            "outlier block holds {} bytes for {count} outliers",
            bytes.len()
        )));
    }
    let list: Vec<(u64, f64)> = bytes
        .chunks_exact(16)
        .map(|c| {
            (
                u64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    let ordered = list.windows(2).all(|w| w[0].0 < w[1].0);
    if !ordered || list.last().is_some_and(|&(o, _)| o as usize >= level_len) {
        return Err(Error::Corrupt("outlier ordinals out of order".into()));
    }
    Ok(list)
}

/// Encodes the codes of one level into its archive blocks.
pub fn encode_level(
    decomposition: &LevelDecomposition,
    level: &QuantizedLevel,
    kind: InterpKind,
) -> Result<LevelBlocks> {
    let words = level.negabinary_codes();
    let encoded = xor_encode(&split(&words));
    let count = words.len() as u64;
    let planes = encoded
        .planes()
        .par_iter()
        .map(|plane| {
            if plane.iter().all(|&b| b == 0) {
                Ok(None)
            } else {
                backend_encode_best(plane, count).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelBlocks {
        count,
        delta: measure_level_loss(decomposition, level, kind)?,
        outlier_count: level.outliers.len() as u64,
        outliers: encode_outliers(&level.outliers)?,
        planes,
    })
}

/// Compresses `grid` and writes the archive to `w`.
pub fn compress_to<T: Scalar, W: Write>(
    grid: &FieldGrid<T>,
    options: &CompressOptions,
    w: &mut W,
) -> Result<ArchiveIndex> {
    let decomposition = LevelDecomposition::new(grid.dims(), options.anchor_cap)?;
    let levels = decomposition.levels();
    let progressive_from = options.progressive_from.unwrap_or(levels);
    if progressive_from == 0 || progressive_from > levels {
        return Err(Error::InvalidPlan(format!(
            "first progressive level {progressive_from} outside 1..={levels}"
        )));
    }
    let (quantized, _) = decorrelate(grid, &decomposition, options.eb, options.interp)?;
    let blocks = quantized
        .iter()
        .map(|q| encode_level(&decomposition, q, options.interp))
        .collect::<Result<Vec<_>>>()?;
    let (value_min, value_max) = grid.value_range();
    let header = ArchiveHeader {
        scalar: T::KIND,
        interp: options.interp,
        dims: grid.dims().to_vec(),
        eb: options.eb,
        levels: levels as u8,
        progressive_from: progressive_from as u8,
        anchor_cap: options.anchor_cap,
        value_min,
        value_max,
        payload_len: 0,
    };
    write_archive(w, header, &blocks)
}

pub fn compress<T: Scalar>(grid: &FieldGrid<T>, options: &CompressOptions) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    compress_to(grid, options, &mut out)?;
    Ok(out)
}

pub fn compress_field(field: &Field, options: &CompressOptions) -> Result<Vec<u8>> {
    match field {
        Field::F32(g) => compress(g, options),
        Field::F64(g) => compress(g, options),
    }
}

/// Decoded state of one level kept between retrievals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionLevel {
    pub loaded: u8,
    /// Negabinary codewords with the unloaded digits zeroed.
    pub codewords: Vec<u32>,
    pub outliers: Vec<u64>,
}

/// What a retrieval has loaded so far, bound to one archive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalSession {
    pub archive_crc: u32,
    /// Indexed by `level - 1`.
    pub levels: Vec<SessionLevel>,
}

impl RetrievalSession {
    pub fn planes(&self) -> Vec<u8> {
        self.levels.iter().map(|l| l.loaded).collect()
    }

    /// `"IPS1" | archive crc u32 | L u8 | per level L..1: k u8 | codeword block | outlier block`
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(SESSION_MAGIC);
        out.extend_from_slice(&self.archive_crc.to_le_bytes());
        out.push(self.levels.len() as u8);
        for level in self.levels.iter().rev() {
            out.push(level.loaded);
            out.extend_from_slice(&encode_words(&level.codewords)?.to_bytes());
            let ordinals: Vec<u32> = level
                .outliers
                .iter()
                .flat_map(|&o| [o as u32, (o >> 32) as u32])
                .collect();
            out.extend_from_slice(&encode_words(&ordinals)?.to_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut head = [0u8; 9];
        r.read_exact(&mut head)
            .map_err(|_| Error::Corrupt("session file truncated".into()))?;
        if &head[..4] != SESSION_MAGIC {
            return Err(Error::BadMagic);
        }
        let archive_crc = u32::from_le_bytes(head[4..8].try_into().unwrap());
        let count = head[8] as usize;
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut k = [0u8; 1];
            r.read_exact(&mut k)
                .map_err(|_| Error::Corrupt("session file truncated".into()))?;
            let codewords = decode_words(&read_encoded_block(&mut r)?)?;
            let halves = decode_words(&read_encoded_block(&mut r)?)?;
            if k[0] as usize > PLANES || halves.len() % 2 != 0 {
                return Err(Error::Corrupt("malformed session level".into()));
            }
            let outliers = halves
                .chunks_exact(2)
                .map(|c| c[0] as u64 | (c[1] as u64) << 32)
                .collect();
            levels.push(SessionLevel {
                loaded: k[0],
                codewords,
                outliers,
            });
        }
        if !r.is_empty() {
            return Err(Error::Corrupt("trailing bytes after session".into()));
        }
        levels.reverse();
        Ok(Self {
            archive_crc,
            levels,
        })
    }
}

/// Output of a retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub field: Field,
    pub session: RetrievalSession,
    /// Payload bytes read from the archive.
    pub bytes_read: u64,
    /// Levels rebuilt, in the order they were visited.
    pub levels_visited: Vec<u32>,
}

/// Per-level codes and outliers ready for the rebuild sweep.
struct LevelCodes {
    codes: Vec<i64>,
    /// `(ordinal, value)`; `None` keeps the value already in the field.
    outliers: Vec<(u64, Option<f64>)>,
}

fn decode_planes(level: &LoadedLevel, count: usize, decoded: &mut BitplaneSet) -> Result<()> {
    let zero = vec![0u8; count.div_ceil(8)];
    for block in &level.planes {
        match block {
            Some(b) => {
                if b.raw_bits != count as u64 {
                    return Err(Error::Corrupt(format!(
                        "plane of {} bits in a level of {count} points",
                        b.raw_bits
                    )));
                }
                xor_decode_next(decoded, &backend_decode(b)?)?
            }
            None => xor_decode_next(decoded, &zero)?,
        }
    }
    Ok(())
}

/// Rebuilds levels `top..=1` in place.
fn rebuild<T: Scalar>(
    values: &mut [T],
    decomposition: &LevelDecomposition,
    kind: InterpKind,
    eb: f64,
    levels: &[LevelCodes],
    top: u32,
    visited: &mut Vec<u32>,
) -> Result<()> {
    for l in (1..=top).rev() {
        visited.push(l);
        let state = &levels[l as usize - 1];
        let mut next = 0;
        let mut first = 0;
        for pass in decomposition.passes(l)? {
            predict_pass_mut(values, decomposition, &pass, kind, first, |vals, ord, idx, pred| {
                if let Some(&(o, v)) = state.outliers.get(next) {
                    if o as usize == ord {
                        next += 1;
                        if let Some(v) = v {
                            vals[idx] = T::from_f64(v);
                        }
                        return;
                    }
                }
                vals[idx] = pred + T::from_f64(dequantize(state.codes[ord], eb));
            });
            first += pass.len();
        }
    }
    Ok(())
}

fn check_level_len(index: &ArchiveIndex, decomposition: &LevelDecomposition) -> Result<()> {
    for l in 1..=decomposition.levels() {
        if index.level(l).count as usize != decomposition.level_len(l)? {
            return Err(Error::Corrupt(format!("level {l} point count does not match shape")));
        }
    }
    Ok(())
}

/// Reconstructs the field from scratch with the planes `plan` names.
pub fn reconstruct<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    plan: &RetrievalPlan,
) -> Result<Retrieval> {
    plan.validate(index)?;
    let h = &index.header;
    let decomposition = LevelDecomposition::new(&h.dims, h.anchor_cap)?;
    check_level_len(index, &decomposition)?;
    let loaded = read_blocks(r, index, plan)?;

    let mut session_levels = Vec::with_capacity(loaded.levels.len());
    let mut codes = Vec::with_capacity(loaded.levels.len());
    for (rec, level) in index.levels.iter().zip(&loaded.levels) {
        let count = rec.count as usize;
        let mut decoded = BitplaneSet::from_planes(count, Vec::new())?;
        decode_planes(level, count, &mut decoded)?;
        let k = decoded.depth();
        let words = merge(&decoded, k)?;
        let outliers = match &level.outliers {
            Some(b) => decode_outliers(b, rec.outlier_count, count)?,
            None if rec.outlier_count == 0 => Vec::new(),
            None => return Err(Error::Corrupt("outlier block missing".into())),
        };
        codes.push(LevelCodes {
            codes: words.iter().map(|&w| from_negabinary(w)).collect(),
            outliers: outliers.iter().map(|&(o, v)| (o, Some(v))).collect(),
        });
        session_levels.push(SessionLevel {
            loaded: k as u8,
            codewords: words,
            outliers: outliers.iter().map(|&(o, _)| o).collect(),
        });
    }

    let mut visited = Vec::new();
    let top = decomposition.levels();
    let field = match h.scalar {
        crate::scalar::ScalarKind::F32 => {
            let mut v = vec![0f32; decomposition.len()];
            rebuild(&mut v, &decomposition, h.interp, h.eb, &codes, top, &mut visited)?;
            Field::F32(FieldGrid::new(h.dims.clone(), v)?)
        }
        crate::scalar::ScalarKind::F64 => {
            let mut v = vec![0f64; decomposition.len()];
            rebuild(&mut v, &decomposition, h.interp, h.eb, &codes, top, &mut visited)?;
            Field::F64(FieldGrid::new(h.dims.clone(), v)?)
        }
    };
    Ok(Retrieval {
        field,
        session: RetrievalSession {
            archive_crc: index.crc,
            levels: session_levels,
        },
        bytes_read: loaded.bytes_read,
        levels_visited: visited,
    })
}

struct Increment {
    session: RetrievalSession,
    /// Code change per level, indexed by `level - 1`.
    delta_codes: Vec<Vec<i64>>,
    /// Coarsest level whose codes changed.
    top_changed: Option<u32>,
    bytes_read: u64,
}

fn load_increment<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    session: &RetrievalSession,
    previous: &Field,
    plan: &RetrievalPlan,
) -> Result<Increment> {
    plan.validate(index)?;
    if session.archive_crc != index.crc || session.levels.len() != index.levels.len() {
        return Err(Error::SessionMismatch);
    }
    if previous.dims() != index.header.dims.as_slice() {
        return Err(Error::InvalidShape("previous output does not match archive".into()));
    }
    if previous.scalar_kind() != index.header.scalar {
        return Err(Error::ScalarMismatch);
    }
    let old = session.planes();
    if !plan.contains(&old) {
        return Err(Error::InvalidPlan(
            "refinement must load at least the planes already loaded".into(),
        ));
    }
    let loaded = read_increment(r, index, Some(&old), &plan.planes)?;
    let mut levels = Vec::with_capacity(old.len());
    let mut delta_codes = Vec::with_capacity(old.len());
    let mut top_changed = None;
    for (i, (prev, level)) in session.levels.iter().zip(&loaded.levels).enumerate() {
        let count = index.levels[i].count as usize;
        if prev.codewords.len() != count {
            return Err(Error::SessionMismatch);
        }
        let mut decoded = split(&prev.codewords);
        decoded.truncate(prev.loaded as usize);
        decode_planes(level, count, &mut decoded)?;
        let k = decoded.depth();
        let words = merge(&decoded, k)?;
        let change: Vec<i64> = words
            .iter()
            .zip(&prev.codewords)
            .map(|(&new, &old)| from_negabinary(new) - from_negabinary(old))
            .collect();
        if change.iter().any(|&c| c != 0) {
            top_changed = top_changed.max(Some(i as u32 + 1));
        }
        delta_codes.push(change);
        levels.push(SessionLevel {
            loaded: k as u8,
            codewords: words,
            outliers: prev.outliers.clone(),
        });
    }
    Ok(Increment {
        session: RetrievalSession {
            archive_crc: index.crc,
            levels,
        },
        delta_codes,
        top_changed,
        bytes_read: loaded.bytes_read,
    })
}

/// Refines `previous` (the output that produced `session`) to `plan`,
/// reading only planes not loaded before.
///
/// Levels coarser than the first changed level keep their previous values;
/// from there down every level is re-predicted from the refined coarser
/// data, so the result is bit-identical to [`reconstruct`] with `plan`.
pub fn refine<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    session: &RetrievalSession,
    previous: &Field,
    plan: &RetrievalPlan,
) -> Result<Retrieval> {
    let inc = load_increment(r, index, session, previous, plan)?;
    let h = &index.header;
    let decomposition = LevelDecomposition::new(&h.dims, h.anchor_cap)?;
    let mut visited = Vec::new();
    let Some(top) = inc.top_changed else {
        return Ok(Retrieval {
            field: previous.clone(),
            session: inc.session,
            bytes_read: inc.bytes_read,
            levels_visited: visited,
        });
    };
    let codes: Vec<LevelCodes> = inc
        .session
        .levels
        .iter()
        .map(|lv| LevelCodes {
            codes: lv.codewords.iter().map(|&w| from_negabinary(w)).collect(),
            outliers: lv.outliers.iter().map(|&o| (o, None)).collect(),
        })
        .collect();
    let field = match previous {
        Field::F32(g) => {
            let mut v = g.values().to_vec();
            rebuild(&mut v, &decomposition, h.interp, h.eb, &codes, top, &mut visited)?;
            Field::F32(FieldGrid::new(h.dims.clone(), v)?)
        }
        Field::F64(g) => {
            let mut v = g.values().to_vec();
            rebuild(&mut v, &decomposition, h.interp, h.eb, &codes, top, &mut visited)?;
            Field::F64(FieldGrid::new(h.dims.clone(), v)?)
        }
    };
    Ok(Retrieval {
        field,
        session: inc.session,
        bytes_read: inc.bytes_read,
        levels_visited: visited,
    })
}

fn add_increment<T: Scalar>(
    values: &mut [T],
    decomposition: &LevelDecomposition,
    kind: InterpKind,
    eb: f64,
    inc: &Increment,
    top: u32,
) -> Result<()> {
    let mut delta = vec![T::zero(); values.len()];
    for l in (1..=top).rev() {
        let change = &inc.delta_codes[l as usize - 1];
        let outliers = &inc.session.levels[l as usize - 1].outliers;
        let mut next = 0;
        let mut first = 0;
        for pass in decomposition.passes(l)? {
            predict_pass_mut(&mut delta, decomposition, &pass, kind, first, |d, ord, idx, pred| {
                if outliers.get(next) == Some(&(ord as u64)) {
                    next += 1;
                    d[idx] = T::zero();
                } else {
                    d[idx] = pred + T::from_f64(dequantize(change[ord], eb));
                }
            });
            first += pass.len();
        }
    }
    for l in 1..=top {
        for pass in decomposition.passes(l)? {
            pass.for_each(|idx, _| values[idx] = values[idx] + delta[idx]);
        }
    }
    Ok(())
}

/// Refinement by adding a propagated increment field to `previous`.
///
/// The code change of every progressive level is dequantized and pushed
/// through the (linear) predictor starting from a zero field, and the sum
/// is added to the previous output. Equal to [`reconstruct`] up to
/// floating-point rounding; [`refine`] is the bit-exact variant.
pub fn refine_additive<R: Read + Seek>(
    r: &mut R,
    index: &ArchiveIndex,
    session: &RetrievalSession,
    previous: &Field,
    plan: &RetrievalPlan,
) -> Result<Retrieval> {
    let inc = load_increment(r, index, session, previous, plan)?;
    let h = &index.header;
    let decomposition = LevelDecomposition::new(&h.dims, h.anchor_cap)?;
    let top = inc.top_changed.unwrap_or(0);
    let mut field = previous.clone();
    match &mut field {
        Field::F32(g) => add_increment(g.values_mut(), &decomposition, h.interp, h.eb, &inc, top)?,
        Field::F64(g) => add_increment(g.values_mut(), &decomposition, h.interp, h.eb, &inc, top)?,
    }
    Ok(Retrieval {
        field,
        session: inc.session,
        bytes_read: inc.bytes_read,
        levels_visited: (1..=top).rev().collect(),
    })
}

/// Reads a whole archive held in memory.
pub fn decompress(archive: &[u8]) -> Result<Field> {
    let mut cursor = std::io::Cursor::new(archive);
    let index = crate::archive::read_header(&mut cursor)?;
    let plan = RetrievalPlan::full(&index);
    Ok(reconstruct(&mut cursor, &index, &plan)?.field)
}
