//! Knapsack planning of which bitplanes to load.
//!
//! Discarding the `d` least significant planes of level `l` costs
//! `weight_l * delta_l[d]` of error, where `weight_l` bounds how much the
//! finer levels amplify a perturbation of level `l`, and saves
//! `size_l[0] - size_l[d]` bytes. The worst-case error of a plan is the sum
//! of those costs plus the compression bound.
//!
//! Both modes run a dynamic program over the progressive levels with the
//! constraint discretized into [`BUCKETS`] integer units, rounding every
//! item cost up so a plan that fits the discrete budget also fits the real
//! one.

use crate::archive::{ArchiveIndex, RetrievalPlan, DELTA_LEN};
use crate::bpcodec::PLANES;
use crate::error::{Error, Result};
use crate::grid::LevelDecomposition;
use crate::predictor::{level_amplification, InterpKind};

/// Resolution of the discretized constraint.
pub const BUCKETS: usize = 1024;

/// Loss and size tables of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelCost {
    /// Deviation when the `d` lowest planes are dropped, non-decreasing in `d`.
    pub delta: [f64; DELTA_LEN],
    /// Bytes loaded when the `d` lowest planes are dropped, non-increasing in `d`.
    pub size: [u64; DELTA_LEN],
    /// Amplification of this level's loss at the finest level.
    pub weight: f64,
}

impl LevelCost {
    #[inline]
    pub fn err(&self, d: usize) -> f64 {
        if self.delta[d] == 0.0 {
            0.0
        } else {
            self.weight * self.delta[d]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorModel {
    /// Indexed by `level - 1`.
    pub levels: Vec<LevelCost>,
    pub eb: f64,
    /// First progressive level.
    pub progressive_from: usize,
    /// Added to the bound whenever any loss is incurred; covers the
    /// difference between the linear error model and floating-point
    /// reconstruction.
    pub rounding_margin: f64,
}

impl ErrorModel {
    /// A model with the uniform `p^(l-1)` amplification of a one-dimensional
    /// interpolant with weight sum `p`.
    pub fn uniform(
        eb: f64,
        p: f64,
        progressive_from: usize,
        tables: Vec<([f64; DELTA_LEN], [u64; DELTA_LEN])>,
    ) -> Result<Self> {
        let levels = tables
            .into_iter()
            .enumerate()
            .map(|(i, (delta, size))| LevelCost {
                delta,
                size,
                weight: p.powi(i as i32),
            })
            .collect();
        let model = Self {
            levels,
            eb,
            progressive_from,
            rounding_margin: 0.0,
        };
        model.check()?;
        Ok(model)
    }

    /// Builds the model of an archive from its index alone.
    pub fn from_index(index: &ArchiveIndex) -> Result<Self> {
        let h = &index.header;
        let decomposition = LevelDecomposition::new(&h.dims, h.anchor_cap)?;
        let weights = level_weights(&decomposition, h.interp)?;
        let levels: Vec<LevelCost> = index
            .levels
            .iter()
            .zip(&weights)
            .map(|(rec, &weight)| {
                let mut size = [0u64; DELTA_LEN];
                for (d, s) in size.iter_mut().enumerate() {
                    *s = rec.loaded_size(PLANES - d);
                }
                LevelCost {
                    delta: rec.delta,
                    size,
                    weight,
                }
            })
            .collect();
        let eps = match h.scalar {
            crate::scalar::ScalarKind::F32 => f32::EPSILON as f64,
            crate::scalar::ScalarKind::F64 => f64::EPSILON,
        };
        let magnitude = h.value_min.abs().max(h.value_max.abs()) + h.eb;
        let mut steps = 0.0;
        for (l, w) in (1..=decomposition.levels()).zip(&weights) {
            let a = level_amplification(&decomposition, l, h.interp)?;
            let passes = decomposition.active_passes(l)?.max(1) as f64;
            steps += w * a * passes;
        }
        let model = Self {
            levels,
            eb: h.eb,
            progressive_from: h.progressive_from as usize,
            rounding_margin: 32.0 * eps * magnitude * steps,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if self.progressive_from == 0 || self.progressive_from > self.levels.len() {
            return Err(Error::InvalidPlan(format!(
                "first progressive level {} of {}",
                self.progressive_from,
                self.levels.len()
            )));
        }
        if !(self.eb > 0.0) {
            return Err(Error::InvalidErrorBound(self.eb));
        }
        for (i, lv) in self.levels.iter().enumerate() {
            let monotone = lv.delta.windows(2).all(|w| w[0] <= w[1])
                && lv.size.windows(2).all(|w| w[0] >= w[1]);
            if lv.delta[0] != 0.0 || !monotone || !(lv.weight >= 1.0) {
                return Err(Error::InvalidPlan(format!("level {} tables malformed", i + 1)));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    fn is_progressive(&self, i: usize) -> bool {
        i < self.progressive_from
    }

    /// Bytes that every plan loads: all of the non-progressive levels and
    /// the outliers of the progressive ones.
    pub fn mandatory_size(&self) -> u64 {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, lv)| {
                if self.is_progressive(i) {
                    lv.size[PLANES]
                } else {
                    lv.size[0]
                }
            })
            .sum()
    }

    pub fn full_size(&self) -> u64 {
        self.levels.iter().map(|lv| lv.size[0]).sum()
    }

    fn plan_from_discards(&self, discards: &[usize]) -> RetrievalPlan {
        let planes = discards.iter().map(|&d| (PLANES - d) as u8).collect();
        let bytes = self
            .levels
            .iter()
            .zip(discards)
            .map(|(lv, &d)| lv.size[d])
            .sum();
        RetrievalPlan {
            planes,
            bytes,
            bound: self.bound_for_discards(discards),
        }
    }

    fn bound_for_discards(&self, discards: &[usize]) -> f64 {
        let loss: f64 = self
            .levels
            .iter()
            .zip(discards)
            .map(|(lv, &d)| lv.err(d))
            .sum();
        if loss > 0.0 {
            loss + self.rounding_margin + self.eb
        } else {
            self.eb
        }
    }

    fn discards_of(&self, plan: &RetrievalPlan) -> Result<Vec<usize>> {
        if plan.planes.len() != self.levels.len() {
            return Err(Error::InvalidPlan(format!(
                "{} levels in plan, {} in model",
                plan.planes.len(),
                self.levels.len()
            )));
        }
        plan.planes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let k = k as usize;
                if k > PLANES || (!self.is_progressive(i) && k != PLANES) {
                    Err(Error::InvalidPlan(format!("level {} loads {k} planes", i + 1)))
                } else {
                    Ok(PLANES - k)
                }
            })
            .collect()
    }

    /// Worst-case point-wise error of reconstructing with `plan`.
    pub fn bound_for_plan(&self, plan: &RetrievalPlan) -> Result<f64> {
        Ok(self.bound_for_discards(&self.discards_of(plan)?))
    }

    /// Bytes `plan` loads.
    pub fn size_of_plan(&self, plan: &RetrievalPlan) -> Result<u64> {
        let d = self.discards_of(plan)?;
        Ok(self.levels.iter().zip(&d).map(|(lv, &d)| lv.size[d]).sum())
    }

    /// Fewest bytes whose worst-case error stays within `target`.
    pub fn plan_for_error(&self, target: f64) -> Result<RetrievalPlan> {
        if target.is_nan() || target < self.eb {
            return Err(Error::Infeasible(format!(
                "error bound {target} is tighter than the compression bound {}",
                self.eb
            )));
        }
        let prog = self.progressive_from;
        let mut discards = vec![0usize; self.levels.len()];

        // Losses of zero are free; take the deepest such discard per level.
        let free: Vec<usize> = self.levels[..prog]
            .iter()
            .map(|lv| (0..DELTA_LEN).rev().find(|&d| lv.err(d) == 0.0).unwrap_or(0))
            .collect();

        let slack = target - self.eb - self.rounding_margin;
        if !(slack > 0.0) {
            discards[..prog].copy_from_slice(&free);
            return Ok(self.plan_from_discards(&discards));
        }
        if slack.is_infinite() {
            for (i, lv) in self.levels[..prog].iter().enumerate() {
                discards[i] = best_index(DELTA_LEN, |d| (lv.size[d], std::cmp::Reverse(d)));
            }
            return Ok(self.plan_from_discards(&discards));
        }

        let unit = slack / BUCKETS as f64;
        let costs: Vec<Vec<Option<usize>>> = self.levels[..prog]
            .iter()
            .map(|lv| (0..DELTA_LEN).map(|d| error_units(lv.err(d), unit)).collect())
            .collect();
        // Equal costs: the deepest discard loads the fewest bytes.
        let cands: Vec<Vec<(usize, usize)>> = costs
            .iter()
            .map(|c| candidates(c, |a, b| b > a))
            .collect();
        // best[i][b]: fewest bytes over levels 0..=i with total cost <= b
        let mut best = vec![vec![u64::MAX; BUCKETS + 1]; prog];
        for i in 0..prog {
            for b in 0..=BUCKETS {
                let mut value = u64::MAX;
                for &(d, c) in &cands[i] {
                    if c > b {
                        break;
                    }
                    let rest = if i == 0 { 0 } else { best[i - 1][b - c] };
                    if rest == u64::MAX {
                        continue;
                    }
                    value = value.min(rest + self.levels[i].size[d]);
                }
                best[i][b] = value;
            }
        }
        // Walk back from the coarsest progressive level, preferring the
        // deepest discard among equal totals.
        let mut b = BUCKETS;
        for i in (0..prog).rev() {
            let want = best[i][b];
            let &(d, c) = cands[i]
                .iter()
                .rev()
                .find(|&&(d, c)| {
                    c <= b && {
                        let rest = if i == 0 { 0 } else { best[i - 1][b - c] };
                        rest != u64::MAX && rest + self.levels[i].size[d] == want
                    }
                })
                .expect("dp table is consistent");
            discards[i] = d;
            b -= c;
        }
        let plan = self.plan_from_discards(&discards);
        debug_assert!(plan.bound <= target);
        Ok(plan)
    }

    /// Smallest worst-case error loading at most `budget` bytes.
    pub fn plan_for_size(&self, budget: u64) -> Result<RetrievalPlan> {
        let mandatory = self.mandatory_size();
        if budget < mandatory {
            return Err(Error::Infeasible(format!(
                "budget of {budget} bytes is below the mandatory {mandatory} bytes"
            )));
        }
        let prog = self.progressive_from;
        if budget >= self.full_size() {
            return Ok(self.plan_from_discards(&vec![0; self.levels.len()]));
        }
        let mut discards = vec![0usize; self.levels.len()];
        let spare = budget - mandatory;
        let optional = |i: usize, d: usize| self.levels[i].size[d] - self.levels[i].size[PLANES];
        let costs: Vec<Vec<Option<usize>>> = (0..prog)
            .map(|i| {
                (0..DELTA_LEN)
                    .map(|d| size_units(optional(i, d), spare))
                    .collect()
            })
            .collect();
        // Equal costs: keep the least loss, then the deepest discard.
        let cands: Vec<Vec<(usize, usize)>> = costs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let lv = &self.levels[i];
                candidates(c, |a, b| lv.err(b) < lv.err(a) || (lv.err(b) == lv.err(a) && b > a))
            })
            .collect();
        // best[i][b]: (least loss, fewest bytes) over levels 0..=i with cost <= b
        type Cell = Option<(f64, u64)>;
        let better = |a: (f64, u64), b: Cell| match b {
            None => true,
            Some(b) => a.0 < b.0 || (a.0 == b.0 && a.1 < b.1),
        };
        let mut best: Vec<Vec<Cell>> = vec![vec![None; BUCKETS + 1]; prog];
        for i in 0..prog {
            for b in 0..=BUCKETS {
                let mut cell: Cell = None;
                for &(d, c) in &cands[i] {
                    if c > b {
                        break;
                    }
                    let rest = if i == 0 { Some((0.0, 0)) } else { best[i - 1][b - c] };
                    let Some((e, s)) = rest else { continue };
                    let cand = (e + self.levels[i].err(d), s + optional(i, d));
                    if better(cand, cell) {
                        cell = Some(cand);
                    }
                }
                best[i][b] = cell;
            }
        }
        let mut b = BUCKETS;
        for i in (0..prog).rev() {
            let want = best[i][b].expect("zero-cost discard always fits");
            let &(d, c) = cands[i]
                .iter()
                .rev()
                .find(|&&(d, c)| {
                    c <= b && {
                        let rest = if i == 0 { Some((0.0, 0)) } else { best[i - 1][b - c] };
                        rest.is_some_and(|(e, s)| {
                            (e + self.levels[i].err(d), s + optional(i, d)) == want
                        })
                    }
                })
                .expect("dp table is consistent");
            discards[i] = d;
            b -= c;
        }
        let plan = self.plan_from_discards(&discards);
        debug_assert!(plan.bytes <= budget);
        Ok(plan)
    }
}

/// One discard count per distinct cost, sorted by cost; `prefer(a, b)`
/// says whether `b` beats `a` at equal cost.
fn candidates(costs: &[Option<usize>], prefer: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (d, c) in costs.iter().enumerate() {
        let Some(c) = *c else { continue };
        match out.iter_mut().find(|(_, oc)| *oc == c) {
            Some(slot) => {
                if prefer(slot.0, d) {
                    slot.0 = d;
                }
            }
            None => out.push((d, c)),
        }
    }
    out.sort_by_key(|&(_, c)| c);
    out
}

/// Per-level amplification weights, indexed by `level - 1`: the product of
/// the prediction amplification of every finer level.
pub fn level_weights(decomposition: &LevelDecomposition, kind: InterpKind) -> Result<Vec<f64>> {
    let mut weights = Vec::with_capacity(decomposition.levels() as usize);
    let mut acc = 1.0;
    for l in 1..=decomposition.levels() {
        weights.push(acc);
        acc *= level_amplification(decomposition, l, kind)?;
    }
    Ok(weights)
}

/// Error cost in whole units, rounded up; `None` if it exceeds the budget.
pub fn error_units(err: f64, unit: f64) -> Option<usize> {
    if err == 0.0 {
        return Some(0);
    }
    let units = (err / unit).ceil();
    // guard against the division rounding below the true quotient
    let units = if units * unit < err { units + 1.0 } else { units };
    (units <= BUCKETS as f64).then_some(units as usize)
}

/// Byte cost in whole units of `spare / BUCKETS`, rounded up.
pub fn size_units(bytes: u64, spare: u64) -> Option<usize> {
    if bytes == 0 {
        return Some(0);
    }
    if spare == 0 {
        return None;
    }
    // ceil(bytes * BUCKETS / spare) in exact integer arithmetic
    let units = (bytes as u128 * BUCKETS as u128).div_ceil(spare as u128);
    (units <= BUCKETS as u128).then_some(units as usize)
}

fn best_index<K: Ord>(n: usize, key: impl Fn(usize) -> K) -> usize {
    (0..n).min_by_key(|&i| key(i)).expect("non-empty")
}
