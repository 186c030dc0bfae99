//! Field storage and the dyadic level hierarchy every other stage walks.
//!
//! Level `L` (the anchor level) holds the points on the coarsest lattice of
//! spacing `2^(L-1)`. Each finer level `l < L` with spacing `s = 2^(l-1)`
//! holds the points on the stride-`s` lattice that are not on the
//! stride-`2s` lattice, visited one dimension at a time: pass `j` takes the
//! points whose coordinate `j` is an odd multiple of `s`, whose lower
//! coordinates are any multiple of `s` and whose higher coordinates are
//! multiples of `2s`. Passes run in ascending dimension order and each pass
//! is visited in row-major order.

use crate::error::{Error, Result};
use crate::scalar::{Scalar, ScalarKind};

pub const MAX_DIMS: usize = 4;

/// Default cap on the anchor stride, as a power of two (stride 64, at most 7 levels).
pub const DEFAULT_ANCHOR_CAP: u8 = 6;

pub fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_DIMS {
        return Err(Error::InvalidShape(format!(
            "expected 1..={MAX_DIMS} dimensions, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidShape(format!("{dims:?} overflows usize")))?;
    Ok(())
}

/// An n-dimensional row-major array of scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid<T> {
    dims: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> FieldGrid<T> {
    pub fn new(dims: Vec<usize>, values: Vec<T>) -> Result<Self> {
        validate_dims(&dims)?;
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::InvalidShape(format!(
                "{} values for dims {dims:?} (expected {n})",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        validate_dims(&dims)?;
        let n = dims.iter().product();
        Ok(Self {
            dims,
            values: vec![T::zero(); n],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_kind(&self) -> ScalarKind {
        T::KIND
    }

    /// Minimum and maximum over the finite values, `(0, 0)` if there are none.
    pub fn value_range(&self) -> (f64, f64) {
        let (lo, hi) = self
            .values
            .iter()
            .map(|v| v.widen())
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if lo > hi {
            (0.0, 0.0)
        } else {
            (lo, hi)
        }
    }

    /// Parses a headerless little-endian raw file.
    pub fn from_le_bytes(dims: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        validate_dims(&dims)?;
        let width = T::KIND.width();
        let n: usize = dims.iter().product();
        if bytes.len() != n * width {
            return Err(Error::InvalidShape(format!(
                "{} bytes do not hold {n} values of {width} bytes",
                bytes.len()
            )));
        }
        let values = bytes.chunks_exact(width).map(T::read_le).collect();
        Self::new(dims, values)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * T::KIND.width());
        for v in &self.values {
            v.write_le(&mut out);
        }
        out
    }
}

/// A field of either supported precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    F32(FieldGrid<f32>),
    F64(FieldGrid<f64>),
}

impl Field {
    pub fn from_le_bytes(kind: ScalarKind, dims: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        Ok(match kind {
            ScalarKind::F32 => Field::F32(FieldGrid::from_le_bytes(dims, bytes)?),
            ScalarKind::F64 => Field::F64(FieldGrid::from_le_bytes(dims, bytes)?),
        })
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Field::F32(g) => g.to_le_bytes(),
            Field::F64(g) => g.to_le_bytes(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            Field::F32(g) => g.dims(),
            Field::F64(g) => g.dims(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Field::F32(g) => g.len(),
            Field::F64(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scalar_kind(&self) -> ScalarKind {
        match self {
            Field::F32(_) => ScalarKind::F32,
            Field::F64(_) => ScalarKind::F64,
        }
    }

    pub fn value_range(&self) -> (f64, f64) {
        match self {
            Field::F32(g) => g.value_range(),
            Field::F64(g) => g.value_range(),
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match self {
            Field::F32(g) => g.values().iter().map(|&v| v as f64).collect(),
            Field::F64(g) => g.values().to_vec(),
        }
    }
}

impl From<FieldGrid<f32>> for Field {
    fn from(g: FieldGrid<f32>) -> Self {
        Field::F32(g)
    }
}

impl From<FieldGrid<f64>> for Field {
    fn from(g: FieldGrid<f64>) -> Self {
        Field::F64(g)
    }
}

/// Number of levels for `dims`: `ceil(log2(max extent))`, capped at
/// `anchor_cap + 1` and never below 1.
pub fn level_count(dims: &[usize], anchor_cap: u8) -> u32 {
    let max = dims.iter().copied().max().unwrap_or(1).max(1);
    // ceil(log2(max)) for max >= 1
    let ceil_log2 = usize::BITS - (max - 1).leading_zeros();
    ceil_log2.min(anchor_cap as u32 + 1).max(1)
}

/// One row-major sweep over a rectangular sub-lattice of the grid.
///
/// Dimensions are left-padded to four so the sweep is a fixed loop nest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pass {
    /// Interpolation dimension, `None` for the anchor level.
    pub dim: Option<usize>,
    /// Point spacing `s` of the level.
    pub spacing: usize,
    start: [usize; MAX_DIMS],
    step: [usize; MAX_DIMS],
    count: [usize; MAX_DIMS],
    elem_stride: [usize; MAX_DIMS],
    pad: usize,
}

impl Pass {
    pub fn len(&self) -> usize {
        self.count.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calls `f(flat_index, coordinate_along_dim)` for every point in order.
    /// The coordinate is 0 for the anchor pass.
    #[inline]
    pub fn for_each<F: FnMut(usize, usize)>(&self, mut f: F) {
        if self.is_empty() {
            return;
        }
        let along = self.dim.map(|d| d + self.pad);
        let [s0, s1, s2, s3] = self.start;
        let [t0, t1, t2, t3] = self.step;
        let [c0, c1, c2, c3] = self.count;
        let [e0, e1, e2, e3] = self.elem_stride;
        for i0 in 0..c0 {
            let x0 = s0 + i0 * t0;
            let b0 = x0 * e0;
            for i1 in 0..c1 {
                let x1 = s1 + i1 * t1;
                let b1 = b0 + x1 * e1;
                for i2 in 0..c2 {
                    let x2 = s2 + i2 * t2;
                    let b2 = b1 + x2 * e2;
                    for i3 in 0..c3 {
                        let x3 = s3 + i3 * t3;
                        let coord = match along {
                            Some(0) => x0,
                            Some(1) => x1,
                            Some(2) => x2,
                            Some(3) => x3,
                            _ => 0,
                        };
                        f(b2 + x3 * e3, coord);
                    }
                }
            }
        }
    }

    /// Flat indices of the pass, in visiting order.
    pub fn indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each(|idx, _| out.push(idx));
        out
    }

    /// Element stride of the interpolation dimension.
    pub fn dim_stride(&self) -> usize {
        self.dim.map_or(0, |d| self.elem_stride[d + self.pad])
    }
}

/// The level hierarchy of a grid shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelDecomposition {
    dims: Vec<usize>,
    elem_strides: Vec<usize>,
    levels: u32,
}

impl LevelDecomposition {
    pub fn new(dims: &[usize], anchor_cap: u8) -> Result<Self> {
        validate_dims(dims)?;
        let mut elem_strides = vec![1; dims.len()];
        for d in (0..dims.len().saturating_sub(1)).rev() {
            elem_strides[d] = elem_strides[d + 1] * dims[d + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            elem_strides,
            levels: level_count(dims, anchor_cap),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn anchor_stride(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn elem_strides(&self) -> &[usize] {
        &self.elem_strides
    }

    pub fn spacing(&self, level: u32) -> usize {
        1 << (level - 1)
    }

    fn check_level(&self, level: u32) -> Result<()> {
        if level == 0 || level > self.levels {
            return Err(Error::InvalidLevel {
                level,
                levels: self.levels,
            });
        }
        Ok(())
    }

    fn blank_pass(&self, dim: Option<usize>, spacing: usize) -> Pass {
        let pad = MAX_DIMS - self.dims.len();
        let mut elem_stride = [0; MAX_DIMS];
        let mut count = [1; MAX_DIMS];
        for d in 0..self.dims.len() {
            elem_stride[d + pad] = self.elem_strides[d];
            count[d + pad] = 0;
        }
        Pass {
            dim,
            spacing,
            start: [0; MAX_DIMS],
            step: [1; MAX_DIMS],
            count,
            elem_stride,
            pad,
        }
    }

    /// Sweeps of `level`, coarse anchors first for the top level and one
    /// pass per dimension otherwise. Empty passes are kept so pass `j`
    /// always interpolates along dimension `j`.
    pub fn passes(&self, level: u32) -> Result<Vec<Pass>> {
        self.check_level(level)?;
        let s = self.spacing(level);
        let lattice = |ext: usize, start: usize, step: usize| {
            if start >= ext {
                0
            } else {
                (ext - 1 - start) / step + 1
            }
        };
        if level == self.levels {
            let mut pass = self.blank_pass(None, s);
            for (d, &ext) in self.dims.iter().enumerate() {
                let p = d + pass.pad;
                pass.step[p] = s;
                pass.count[p] = lattice(ext, 0, s);
            }
            return Ok(vec![pass]);
        }
        let passes = (0..self.dims.len())
            .map(|j| {
                let mut pass = self.blank_pass(Some(j), s);
                for (d, &ext) in self.dims.iter().enumerate() {
                    let p = d + pass.pad;
                    let (start, step) = match d.cmp(&j) {
                        std::cmp::Ordering::Less => (0, s),
                        std::cmp::Ordering::Equal => (s, 2 * s),
                        std::cmp::Ordering::Greater => (0, 2 * s),
                    };
                    pass.start[p] = start;
                    pass.step[p] = step;
                    pass.count[p] = lattice(ext, start, step);
                }
                pass
            })
            .collect();
        Ok(passes)
    }

    /// Number of points in `level`.
    pub fn level_len(&self, level: u32) -> Result<usize> {
        Ok(self.passes(level)?.iter().map(Pass::len).sum())
    }

    /// Coordinates of `level`, grouped by pass.
    pub fn enumerate_level(&self, level: u32) -> Result<Vec<Vec<Vec<usize>>>> {
        Ok(self
            .passes(level)?
            .iter()
            .map(|pass| pass.indices().into_iter().map(|i| self.coords(i)).collect())
            .collect())
    }

    /// Row-major coordinates of a flat index.
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for d in 0..self.dims.len() {
            out[d] = index / self.elem_strides[d];
            index %= self.elem_strides[d];
        }
        out
    }

    pub fn flat_index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.elem_strides)
            .map(|(c, s)| c * s)
            .sum()
    }

    /// Passes of `level` that contain at least one point.
    pub fn active_passes(&self, level: u32) -> Result<usize> {
        Ok(self.passes(level)?.iter().filter(|p| !p.is_empty()).count())
    }
}
