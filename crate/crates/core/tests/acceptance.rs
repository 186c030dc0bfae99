//! End-to-end acceptance checks. Each check prints one PASS/FAIL line and
//! the process exits nonzero if any check fails.

use std::io::Cursor;
use std::time::{Duration, Instant};

use bitprog::archive::read_header;
use bitprog::bpcodec::{
    backend_decode, backend_encode, merge, plane_entropy, split, xor_decode, xor_encode, Backend,
    BitplaneSet, PLANES,
};
use bitprog::grid::{FieldGrid, LevelDecomposition, DEFAULT_ANCHOR_CAP};
use bitprog::metrics::max_abs_error;
use bitprog::pipeline::decorrelate;
use bitprog::planner::ErrorModel;
use bitprog::quantizer::{from_negabinary, suffix_uncertainty, to_negabinary, CODE_LIMIT};
use bitprog::synth::smooth_field;
use bitprog::{compress, reconstruct, refine, CompressOptions, InterpKind, RetrievalPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SUITE_FIELDS: u64 = 20;
const SUITE_RELATIVE_BOUNDS: [f64; 3] = [1e-2, 1e-4, 1e-6];

struct Entry {
    grid: FieldGrid<f64>,
    eb: f64,
    archive: Vec<u8>,
}

struct Suite {
    entries: Vec<Entry>,
    build_time: Duration,
}

fn build_suite() -> Suite {
    let start = Instant::now();
    let entries = (0..SUITE_FIELDS)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let grid = smooth_field::<f64>(&[64, 64, 64], seed).unwrap();
            let (lo, hi) = grid.value_range();
            SUITE_RELATIVE_BOUNDS.iter().map(move |rel| {
                let eb = rel * (hi - lo);
                let archive = compress(&grid, &CompressOptions::new(eb)).unwrap();
                Entry {
                    grid: grid.clone(),
                    eb,
                    archive,
                }
            })
        })
        .collect();
    Suite {
        entries,
        build_time: start.elapsed(),
    }
}

type Outcome = Result<String, String>;

fn full_fidelity(suite: &Suite) -> Outcome {
    let start = Instant::now();
    let mut worst_ratio = 0f64;
    for e in &suite.entries {
        let index = read_header(&mut Cursor::new(&e.archive)).unwrap();
        let out = reconstruct(&mut Cursor::new(&e.archive), &index, &RetrievalPlan::full(&index))
            .unwrap();
        let err = max_abs_error(e.grid.values(), &out.field.to_f64_vec());
        if err > e.eb {
            return Err(format!("max error {err:e} exceeds eb {:e}", e.eb));
        }
        worst_ratio = worst_ratio.max(err / e.eb);
    }
    let total = suite.build_time + start.elapsed();
    if total > Duration::from_secs(60) {
        return Err(format!("took {total:.1?}"));
    }
    Ok(format!(
        "{} archives, worst error/eb {worst_ratio:.4}, {total:.1?}",
        suite.entries.len()
    ))
}

fn progressive_soundness(suite: &Suite) -> Outcome {
    let mut cases = 0;
    let mut tightest = f64::INFINITY;
    for e in &suite.entries {
        let index = read_header(&mut Cursor::new(&e.archive)).unwrap();
        let model = ErrorModel::from_index(&index).unwrap();
        for exp in [2, 6, 10, 16] {
            let target = e.eb * 2f64.powi(exp);
            let plan = model.plan_for_error(target).unwrap();
            let out = reconstruct(&mut Cursor::new(&e.archive), &index, &plan).unwrap();
            let err = max_abs_error(e.grid.values(), &out.field.to_f64_vec());
            let bound = model.bound_for_plan(&plan).unwrap();
            if err > target || bound < err {
                return Err(format!(
                    "E = 2^{exp} eb: measured {err:e}, bound {bound:e}, target {target:e}"
                ));
            }
            tightest = tightest.min(bound / err.max(f64::MIN_POSITIVE));
            cases += 1;
        }
    }
    Ok(format!("{cases} plans sound, smallest bound/measured {tightest:.2}"))
}

/// Tables that are constant on each run of four discard counts, so the
/// planner's full choice set collapses onto multiples of four.
fn step_tables(rng: &mut ChaCha8Rng, size_step: u64) -> ([f64; 33], [u64; 33]) {
    let scale = rng.gen_range(20..600);
    let mut delta = [0f64; 33];
    let mut size = [0u64; 33];
    let mut d_acc = 0f64;
    let mut s_acc: u64 = (0..8).map(|_| rng.gen_range(0..40)).sum::<u64>() + 1;
    for g in 0..=8 {
        let lo = g * 4;
        let hi = (lo + 3).min(32);
        if g > 0 {
            d_acc += rng.gen_range(0..scale) as f64;
            s_acc -= s_acc.min(rng.gen_range(0..40));
        }
        for d in lo..=hi {
            delta[d] = d_acc;
            size[d] = s_acc * size_step;
        }
    }
    (delta, size)
}

fn exhaustive(model: &ErrorModel, mut visit: impl FnMut(&[usize])) {
    let prog = model.progressive_from;
    let l = model.levels();
    let mut choice = vec![0usize; l];
    let combos = 9usize.pow(prog as u32);
    for mut c in 0..combos {
        for slot in choice.iter_mut().take(prog) {
            *slot = (c % 9) * 4;
            c /= 9;
        }
        visit(&choice);
    }
}

fn cost_of(model: &ErrorModel, discards: &[usize]) -> (f64, u64) {
    model
        .levels
        .iter()
        .zip(discards)
        .fold((0.0, 0), |(e, s), (lv, &d)| (e + lv.err(d), s + lv.size[d]))
}

fn plan_discards(plan: &RetrievalPlan) -> Vec<usize> {
    plan.planes.iter().map(|&k| PLANES - k as usize).collect()
}

fn planner_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..200 {
        let levels = rng.gen_range(1..=4);
        let lp = rng.gen_range(1..=levels);
        let p = if rng.gen_bool(0.5) { 1.0 } else { 2.0 };
        let size_step = rng.gen_range(1..=3);
        let tables = (0..levels).map(|_| step_tables(&mut rng, size_step)).collect();
        let eb = 1.0;
        let model = ErrorModel::uniform(eb, p, lp, tables).unwrap();

        // integer costs with a slack of exactly one unit per bucket make the
        // discretized program exact
        let target = eb + bitprog::planner::BUCKETS as f64;
        let plan = model.plan_for_error(target).unwrap();
        let (plan_err, plan_bytes) = cost_of(&model, &plan_discards(&plan));
        let mut best = u64::MAX;
        exhaustive(&model, |d| {
            let (e, s) = cost_of(&model, d);
            if eb + e <= target {
                best = best.min(s);
            }
        });
        if plan_bytes != best || eb + plan_err > target {
            return Err(format!("case {case} error mode: dp {plan_bytes} bytes, optimum {best}"));
        }

        let spare = bitprog::planner::BUCKETS as u64 * size_step;
        let budget = model.mandatory_size() + spare;
        let plan = model.plan_for_size(budget).unwrap();
        let (plan_err, plan_bytes) = cost_of(&model, &plan_discards(&plan));
        let mut best = f64::INFINITY;
        exhaustive(&model, |d| {
            let (e, s) = cost_of(&model, d);
            if s <= budget {
                best = best.min(e);
            }
        });
        if plan_err != best || plan_bytes > budget {
            return Err(format!("case {case} size mode: dp error {plan_err}, optimum {best}"));
        }
    }
    Ok("200 models agree in both modes".into())
}

fn incremental_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatches = 0;
    let mut steps = 0;
    for case in 0..50u64 {
        let grid = smooth_field::<f64>(&[32, 32, 32], 1000 + case).unwrap();
        let (lo, hi) = grid.value_range();
        let kind = if rng.gen_bool(0.5) { InterpKind::Linear } else { InterpKind::Cubic };
        let eb = 10f64.powf(rng.gen_range(-7.0..-2.0)) * (hi - lo);
        let archive = compress(&grid, &CompressOptions::new(eb).interp(kind)).unwrap();
        let index = read_header(&mut Cursor::new(&archive)).unwrap();
        let levels = index.levels.len();
        let chain = rng.gen_range(2..=3);
        let mut ks: Vec<Vec<u8>> = (0..levels)
            .map(|_| {
                let mut v: Vec<u8> = (0..chain).map(|_| rng.gen_range(0..=32)).collect();
                v.sort();
                v
            })
            .collect();
        for k in ks.iter_mut().skip(index.header.progressive_from as usize) {
            k.fill(32);
        }
        let plan = |step: usize| {
            let planes: Vec<u8> = ks.iter().map(|k| k[step]).collect();
            RetrievalPlan {
                bytes: bitprog::archive::plan_bytes(&index, &planes),
                planes,
                bound: f64::NAN,
            }
        };
        let mut current = reconstruct(&mut Cursor::new(&archive), &index, &plan(0)).unwrap();
        for step in 1..chain {
            let p = plan(step);
            let fresh = reconstruct(&mut Cursor::new(&archive), &index, &p).unwrap();
            current = refine(
                &mut Cursor::new(&archive),
                &index,
                &current.session,
                &current.field,
                &p,
            )
            .unwrap();
            if current.field.to_le_bytes() != fresh.field.to_le_bytes()
                || current.session != fresh.session
            {
                mismatches += 1;
            }
            steps += 1;
        }
    }
    if mismatches > 0 {
        return Err(format!("{mismatches} of {steps} refinements differ"));
    }
    Ok(format!("{steps} refinements byte-identical"))
}

fn brute_uncertainty(d: u32) -> f64 {
    (0u64..1 << d)
        .map(|s| {
            (0..d)
                .filter(|k| s >> k & 1 == 1)
                .map(|k| (-2i64).pow(k))
                .sum::<i64>()
                .abs()
        })
        .max()
        .unwrap_or(0) as f64
}

fn negabinary_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fixed = [0, 1, -1, 2, -2, CODE_LIMIT as i32, -(CODE_LIMIT as i32)];
    let sampled = (0..1_000_000 - fixed.len())
        .map(|_| rng.gen_range(-(CODE_LIMIT as i32)..=CODE_LIMIT as i32));
    for q in fixed.into_iter().chain(sampled) {
        let c = to_negabinary(q).map_err(|e| e.to_string())?;
        if from_negabinary(c) != q as i64 {
            return Err(format!("round trip failed for {q}"));
        }
    }
    if to_negabinary(1).unwrap() != 0b01 || to_negabinary(-1).unwrap() != 0b11 {
        return Err("digits of 1 and -1".into());
    }
    for d in 0..=14 {
        if suffix_uncertainty(d).unwrap() != brute_uncertainty(d) {
            return Err(format!("uncertainty differs from enumeration at d = {d}"));
        }
    }
    let mut worst_ratio_gap = 0f64;
    for d in 1..=32 {
        let u = suffix_uncertainty(d).unwrap();
        let sign_magnitude = 2f64.powi(d as i32) - 1.0;
        if u > sign_magnitude {
            return Err(format!("uncertainty above sign-magnitude at d = {d}"));
        }
        if d >= 8 {
            let gap = ((u / sign_magnitude) / (2.0 / 3.0) - 1.0).abs();
            worst_ratio_gap = worst_ratio_gap.max(gap);
        }
    }
    if worst_ratio_gap > 0.05 {
        return Err(format!("ratio off two thirds by {worst_ratio_gap:.4}"));
    }
    Ok(format!("10^6 codes exact, ratio within {:.3}% of 2/3", worst_ratio_gap * 100.0))
}

fn coding_losslessness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let words: Vec<u32> = (0..n)
        .map(|_| to_negabinary(rng.gen_range(-(1i32 << 20)..1 << 20)).unwrap() | rng.gen::<u32>() & 0x1)
        .collect();
    for backend in [Backend::Identity, Backend::Zstd] {
        let encoded = xor_encode(&split(&words));
        let blocks: Vec<_> = encoded
            .planes()
            .iter()
            .map(|p| backend_encode(p, n as u64, backend).unwrap())
            .collect();
        let restored: Vec<Vec<u8>> = blocks.iter().map(|b| backend_decode(b).unwrap()).collect();
        if restored != encoded.planes() {
            return Err(format!("{backend:?} planes differ after decode"));
        }
        let set = BitplaneSet::from_planes(n, restored).unwrap();
        for k in 0..=PLANES {
            let mut prefix = set.clone();
            prefix.truncate(k);
            let merged = merge(&xor_decode(&prefix, k).unwrap(), k).unwrap();
            let keep = if k == 0 { 0 } else { u32::MAX << (PLANES - k) };
            if merged.iter().zip(&words).any(|(&m, &w)| m != w & keep) {
                return Err(format!("{backend:?} prefix of {k} planes decodes wrongly"));
            }
        }
    }
    Ok(format!("{n} codewords exact for both backends, all prefixes"))
}

fn entropy_direction(suite: &Suite) -> Outcome {
    let mut holds = 0;
    let mut fields = 0;
    for e in suite.entries.iter().skip(1).step_by(SUITE_RELATIVE_BOUNDS.len()) {
        let d = LevelDecomposition::new(e.grid.dims(), DEFAULT_ANCHOR_CAP).unwrap();
        let (levels, _) = decorrelate(&e.grid, &d, e.eb, InterpKind::Cubic).unwrap();
        let words: Vec<u32> = levels.iter().flat_map(|q| q.negabinary_codes()).collect();
        let raw = split(&words);
        let xor = xor_encode(&raw);
        let sum = |s: &BitplaneSet| -> f64 {
            (8..PLANES).map(|p| plane_entropy(s.plane(p), words.len())).sum()
        };
        if sum(&xor) <= sum(&raw) {
            holds += 1;
        }
        fields += 1;
    }
    let share = holds as f64 / fields as f64;
    if share < 0.9 {
        return Err(format!("direction holds on {holds} of {fields} fields"));
    }
    Ok(format!("direction holds on {holds} of {fields} fields"))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn planner_overhead() -> Outcome {
    let grid = smooth_field::<f64>(&[128, 128, 128], 77).unwrap();
    let (lo, hi) = grid.value_range();
    let eb = 1e-4 * (hi - lo);
    let archive = compress(&grid, &CompressOptions::new(eb)).unwrap();
    let index = read_header(&mut Cursor::new(&archive)).unwrap();
    let mut plan_times = Vec::new();
    let mut recon_times = Vec::new();
    for _ in 0..5 {
        let start = Instant::now();
        let model = ErrorModel::from_index(&index).unwrap();
        let plan = model.plan_for_error(eb * 1024.0).unwrap();
        plan_times.push(start.elapsed());
        let start = Instant::now();
        let out = reconstruct(&mut Cursor::new(&archive), &index, &plan).unwrap();
        recon_times.push(start.elapsed());
        std::hint::black_box(out);
    }
    let (p, r) = (median(plan_times), median(recon_times));
    let share = p.as_secs_f64() / r.as_secs_f64();
    let msg = format!("planning {p:.2?}, reconstruct {r:.2?}, {:.3}%", share * 100.0);
    if share < 0.01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rate_distortion() -> Outcome {
    let grid = smooth_field::<f64>(&[64, 64, 64], 9).unwrap();
    let (lo, hi) = grid.value_range();
    let eb = 1e-6 * (hi - lo);
    let archive = compress(&grid, &CompressOptions::new(eb)).unwrap();
    let index = read_header(&mut Cursor::new(&archive)).unwrap();
    let model = ErrorModel::from_index(&index).unwrap();
    let high = model.full_size() as f64;
    let low = (model.mandatory_size() as f64).max(high / 512.0);
    let mut errors = Vec::new();
    let mut rises = Vec::new();
    for i in 0..12 {
        let budget = (low * (high / low).powf(i as f64 / 11.0)).round() as u64;
        let plan = model.plan_for_size(budget).unwrap();
        let out = reconstruct(&mut Cursor::new(&archive), &index, &plan).unwrap();
        let err = max_abs_error(grid.values(), &out.field.to_f64_vec());
        if errors.last().is_some_and(|&prev| err > prev) {
            rises.push(format!("{:.3e} at {budget} bytes", err));
        }
        errors.push(err);
    }
    let mut byte_rises = 0;
    let mut previous = u64::MAX;
    for exp in 0..24 {
        let plan = model.plan_for_error(eb * 2f64.powi(exp)).unwrap();
        if plan.bytes > previous {
            byte_rises += 1;
        }
        previous = plan.bytes;
    }
    let detail = format!(
        "12 budgets from {low:.0} to {high:.0} bytes, errors {:.2e} down to {:.2e}, \
         {} error rises [{}], {byte_rises} byte rises over 24 targets",
        errors[0],
        errors[11],
        rises.len(),
        rises.join(", ")
    );
    if rises.is_empty() && byte_rises == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sanity_ratio() -> Outcome {
    let grid = smooth_field::<f64>(&[64, 64, 64], 10).unwrap();
    let (lo, hi) = grid.value_range();
    let archive = compress(&grid, &CompressOptions::new(1e-4 * (hi - lo))).unwrap();
    let ratio = (grid.len() * 8) as f64 / archive.len() as f64;
    let msg = format!("compression ratio {ratio:.2}");
    if ratio >= 4.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let suite = build_suite();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("full-fidelity error guarantee", Box::new(|| full_fidelity(&suite))),
        ("progressive soundness", Box::new(|| progressive_soundness(&suite))),
        ("planner optimality", Box::new(planner_optimality)),
        ("incremental equivalence", Box::new(incremental_equivalence)),
        ("negabinary contract", Box::new(negabinary_contract)),
        ("coding losslessness", Box::new(coding_losslessness)),
        ("entropy direction", Box::new(|| entropy_direction(&suite))),
        ("planner overhead", Box::new(planner_overhead)),
        ("rate-distortion monotonicity", Box::new(rate_distortion)),
        ("sanity compression ratio", Box::new(sanity_ratio)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
