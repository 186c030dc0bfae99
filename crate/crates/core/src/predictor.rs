//! Interpolation predictors over the level hierarchy.

use crate::error::{Error, Result};
use crate::grid::{LevelDecomposition, Pass};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InterpKind {
    Linear,
    Cubic,
}

impl InterpKind {
    /// Sum of absolute interpolation weights: the operator's infinity norm.
    pub fn amplification(self) -> f64 {
        match self {
            InterpKind::Linear => 0.5 + 0.5,
            InterpKind::Cubic => 2.0 * (1.0 / 16.0) + 2.0 * (9.0 / 16.0),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            InterpKind::Linear => 0,
            InterpKind::Cubic => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(InterpKind::Linear),
            1 => Some(InterpKind::Cubic),
            _ => None,
        }
    }
}

#[inline]
pub fn predict_linear<T: Scalar>(a: T, b: T) -> T {
    (a + b) * T::from_f64(0.5)
}

#[inline]
pub fn predict_cubic<T: Scalar>(a: T, b: T, c: T, d: T) -> T {
    (b + c) * T::from_f64(9.0 / 16.0) - (a + d) * T::from_f64(1.0 / 16.0)
}

/// Prediction for the point at flat `index` whose coordinate along the pass
/// dimension is `coord`. Falls back from cubic to linear to copying the
/// lower neighbour as the grid edge cuts off sources.
#[inline]
pub fn predict_point<T: Scalar>(
    values: &[T],
    index: usize,
    coord: usize,
    spacing: usize,
    extent: usize,
    dim_stride: usize,
    kind: InterpKind,
) -> T {
    let step = spacing * dim_stride;
    let lower = values[index - step];
    if coord + spacing >= extent {
        return lower;
    }
    let upper = values[index + step];
    if kind == InterpKind::Cubic && coord >= 3 * spacing && coord + 3 * spacing < extent {
        predict_cubic(values[index - 3 * step], lower, upper, values[index + 3 * step])
    } else {
        predict_linear(lower, upper)
    }
}

/// Runs `f(ordinal, flat_index, prediction)` for every point of `pass`,
/// reading sources from `values`. `ordinal` counts from `first_ordinal`.
///
/// The closure may not write `values`; callers that need to store results
/// before later points are predicted use [`predict_pass_mut`].
pub fn predict_pass<T: Scalar, F: FnMut(usize, usize, T)>(
    values: &[T],
    decomposition: &LevelDecomposition,
    pass: &Pass,
    kind: InterpKind,
    first_ordinal: usize,
    mut f: F,
) {
    let mut ordinal = first_ordinal;
    match pass.dim {
        None => pass.for_each(|idx, _| {
            f(ordinal, idx, T::zero());
            ordinal += 1;
        }),
        Some(j) => {
            let extent = decomposition.dims()[j];
            let stride = pass.dim_stride();
            pass.for_each(|idx, coord| {
                let p = predict_point(values, idx, coord, pass.spacing, extent, stride, kind);
                f(ordinal, idx, p);
                ordinal += 1;
            })
        }
    }
}

/// Like [`predict_pass`], but hands the closure mutable access so it can
/// store each reconstructed value as soon as it is produced.
///
/// Points within one pass never read each other, so the write order does
/// not affect the predictions.
pub fn predict_pass_mut<T: Scalar, F: FnMut(&mut [T], usize, usize, T)>(
    values: &mut [T],
    decomposition: &LevelDecomposition,
    pass: &Pass,
    kind: InterpKind,
    first_ordinal: usize,
    mut f: F,
) {
    let mut ordinal = first_ordinal;
    match pass.dim {
        None => pass.for_each(|idx, _| {
            f(values, ordinal, idx, T::zero());
            ordinal += 1;
        }),
        Some(j) => {
            let extent = decomposition.dims()[j];
            let stride = pass.dim_stride();
            pass.for_each(|idx, coord| {
                let p = predict_point(values, idx, coord, pass.spacing, extent, stride, kind);
                f(values, ordinal, idx, p);
                ordinal += 1;
            })
        }
    }
}

/// Predictions for every point of `level`, in level order, from a partially
/// materialized field. `known[i]` marks flat indices whose value is final.
///
/// Every pass is predicted from `values` as given, so the caller must
/// already hold the earlier passes of the level. A source that is not yet
/// known is reported as corruption.
pub fn predict_level<T: Scalar>(
    values: &[T],
    known: &[bool],
    decomposition: &LevelDecomposition,
    level: u32,
    kind: InterpKind,
) -> Result<Vec<T>> {
    if values.len() != decomposition.len() || known.len() != values.len() {
        return Err(Error::InvalidShape("partial field does not match grid".into()));
    }
    let mut out = Vec::with_capacity(decomposition.level_len(level)?);
    for pass in decomposition.passes(level)? {
        if let Some(j) = pass.dim {
            let extent = decomposition.dims()[j];
            let stride = pass.dim_stride();
            let s = pass.spacing;
            let mut missing = None;
            pass.for_each(|idx, coord| {
                let mut need = vec![idx - s * stride];
                if coord + s < extent {
                    need.push(idx + s * stride);
                    if kind == InterpKind::Cubic && coord >= 3 * s && coord + 3 * s < extent {
                        need.push(idx - 3 * s * stride);
                        need.push(idx + 3 * s * stride);
                    }
                }
                if let Some(&bad) = need.iter().find(|&&i| !known[i]) {
                    missing.get_or_insert(bad);
                }
            });
            if let Some(bad) = missing {
                return Err(Error::Corrupt(format!(
                    "level {level} pass {j} reads unmaterialized point {:?}",
                    decomposition.coords(bad)
                )));
            }
        }
        predict_pass(values, decomposition, &pass, kind, 0, |_, _, p| out.push(p));
    }
    Ok(out)
}

/// Upper bound on how much level `level`'s prediction amplifies a
/// perturbation of the coarser levels (in the infinity norm).
///
/// Each non-empty pass multiplies by at most the interpolant's weight sum,
/// and only passes wide enough to use the cubic stencil can exceed 1.
pub fn level_amplification(
    decomposition: &LevelDecomposition,
    level: u32,
    kind: InterpKind,
) -> Result<f64> {
    if level == decomposition.levels() {
        decomposition.passes(level)?;
        return Ok(1.0);
    }
    let s = decomposition.spacing(level);
    let mut factor = 1.0;
    for pass in decomposition.passes(level)? {
        if pass.is_empty() {
            continue;
        }
        let extent = decomposition.dims()[pass.dim.expect("non-anchor pass")];
        if kind == InterpKind::Cubic && extent > 6 * s {
            factor *= kind.amplification();
        }
    }
    Ok(factor)
}
