use std::io::Cursor;

use bitprog::archive::read_header;
use bitprog::metrics::max_abs_error;
use bitprog::synth::smooth_field;
use bitprog::{
    compress, reconstruct, refine, refine_additive, CompressOptions, ErrorModel, Field, FieldGrid,
    InterpKind, RetrievalPlan,
};
use proptest::prelude::*;

fn archive_of(grid: &FieldGrid<f64>, eb: f64, kind: InterpKind) -> Vec<u8> {
    compress(grid, &CompressOptions::new(eb).interp(kind)).unwrap()
}

fn shapes() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        (2usize..200).prop_map(|a| vec![a]),
        (2usize..40, 1usize..40).prop_map(|(a, b)| vec![a, b]),
        (2usize..14, 2usize..14, 2usize..14).prop_map(|(a, b, c)| vec![a, b, c]),
        (2usize..6, 2usize..6, 2usize..6, 2usize..6).prop_map(|(a, b, c, d)| vec![a, b, c, d]),
    ]
}

fn kinds() -> impl Strategy<Value = InterpKind> {
    prop_oneof![Just(InterpKind::Linear), Just(InterpKind::Cubic)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn full_retrieval_within_bound(dims in shapes(), seed in any::<u64>(), rel in 1e-6f64..1e-1, kind in kinds()) {
        let grid = smooth_field::<f64>(&dims, seed).unwrap();
        let (lo, hi) = grid.value_range();
        let eb = rel * (hi - lo).max(1e-12);
        let bytes = archive_of(&grid, eb, kind);
        let index = read_header(&mut Cursor::new(&bytes)).unwrap();
        let out = reconstruct(&mut Cursor::new(&bytes), &index, &RetrievalPlan::full(&index)).unwrap();
        let Field::F64(out) = out.field else { panic!() };
        prop_assert!(max_abs_error(grid.values(), out.values()) <= eb);
    }

    #[test]
    fn planned_retrieval_within_bound(dims in shapes(), seed in any::<u64>(), scale in 0u32..20, kind in kinds()) {
        let grid = smooth_field::<f64>(&dims, seed).unwrap();
        let eb = 1e-5;
        let bytes = archive_of(&grid, eb, kind);
        let index = read_header(&mut Cursor::new(&bytes)).unwrap();
        let model = ErrorModel::from_index(&index).unwrap();
        let target = eb * 2f64.powi(scale as i32);
        let plan = model.plan_for_error(target).unwrap();
        prop_assert!(plan.bound <= target);
        let out = reconstruct(&mut Cursor::new(&bytes), &index, &plan).unwrap();
        prop_assert_eq!(out.bytes_read, plan.bytes);
        let err = max_abs_error(grid.values(), &out.field.to_f64_vec());
        prop_assert!(err <= plan.bound, "err {} bound {}", err, plan.bound);
    }

    #[test]
    fn size_plans_within_budget(dims in shapes(), seed in any::<u64>(), frac in 0.0f64..1.2, kind in kinds()) {
        let grid = smooth_field::<f64>(&dims, seed).unwrap();
        let bytes = archive_of(&grid, 1e-6, kind);
        let index = read_header(&mut Cursor::new(&bytes)).unwrap();
        let model = ErrorModel::from_index(&index).unwrap();
        let lo = model.mandatory_size();
        let budget = lo + ((model.full_size() - lo) as f64 * frac) as u64;
        let plan = model.plan_for_size(budget).unwrap();
        prop_assert!(plan.bytes <= budget);
        let out = reconstruct(&mut Cursor::new(&bytes), &index, &plan).unwrap();
        prop_assert!(max_abs_error(grid.values(), &out.field.to_f64_vec()) <= plan.bound);
    }

    #[test]
    fn refine_equals_fresh(dims in shapes(), seed in any::<u64>(), a in 0u32..24, b in 0u32..24, kind in kinds()) {
        let grid = smooth_field::<f64>(&dims, seed).unwrap();
        let eb = 1e-6;
        let bytes = archive_of(&grid, eb, kind);
        let index = read_header(&mut Cursor::new(&bytes)).unwrap();
        let model = ErrorModel::from_index(&index).unwrap();
        let (loose, tight) = (a.max(b), a.min(b));
        let first = model.plan_for_error(eb * 2f64.powi(loose as i32)).unwrap();
        let mut second = model.plan_for_error(eb * 2f64.powi(tight as i32)).unwrap();
        for (s, f) in second.planes.iter_mut().zip(&first.planes) {
            *s = (*s).max(*f);
        }
        let coarse = reconstruct(&mut Cursor::new(&bytes), &index, &first).unwrap();
        let fresh = reconstruct(&mut Cursor::new(&bytes), &index, &second).unwrap();
        let refined = refine(&mut Cursor::new(&bytes), &index, &coarse.session, &coarse.field, &second).unwrap();
        prop_assert_eq!(&refined.field, &fresh.field);
        prop_assert_eq!(&refined.session, &fresh.session);
        prop_assert_eq!(coarse.bytes_read + refined.bytes_read, fresh.bytes_read);

        let additive = refine_additive(&mut Cursor::new(&bytes), &index, &coarse.session, &coarse.field, &second).unwrap();
        let gap = max_abs_error(&additive.field.to_f64_vec(), &fresh.field.to_f64_vec());
        prop_assert!(gap <= 1e-9, "additive refinement drifted by {}", gap);
    }
}

#[test]
fn reconstruct_visits_each_level_once() {
    let grid = smooth_field::<f32>(&[33, 20, 9], 1).unwrap();
    let bytes = compress(&grid, &CompressOptions::new(1e-3)).unwrap();
    let index = read_header(&mut Cursor::new(&bytes)).unwrap();
    let out = reconstruct(&mut Cursor::new(&bytes), &index, &RetrievalPlan::full(&index)).unwrap();
    let levels = index.header.levels as u32;
    assert_eq!(out.levels_visited, (1..=levels).rev().collect::<Vec<_>>());
}

#[test]
fn f32_fields_round_trip() {
    let grid = smooth_field::<f32>(&[30, 31], 8).unwrap();
    let bytes = compress(&grid, &CompressOptions::new(1e-4)).unwrap();
    let out = bitprog::decompress(&bytes).unwrap();
    let Field::F32(out) = out else { panic!("scalar kind changed") };
    for (a, b) in out.values().iter().zip(grid.values()) {
        assert!(((a - b) as f64).abs() <= 1e-4);
    }
}

#[test]
fn non_progressive_levels_always_load() {
    let grid = smooth_field::<f64>(&[65, 65], 2).unwrap();
    let opts = CompressOptions::new(1e-6).progressive_from(2);
    let bytes = compress(&grid, &opts).unwrap();
    let index = read_header(&mut Cursor::new(&bytes)).unwrap();
    let model = ErrorModel::from_index(&index).unwrap();
    let plan = model.plan_for_error(1.0).unwrap();
    for l in 3..=index.header.levels as u32 {
        assert_eq!(plan.loaded(l), 32);
    }
    let out = reconstruct(&mut Cursor::new(&bytes), &index, &plan).unwrap();
    assert!(max_abs_error(grid.values(), &out.field.to_f64_vec()) <= plan.bound);
}

#[test]
fn truncated_archive_is_rejected() {
    let grid = smooth_field::<f64>(&[17, 17], 5).unwrap();
    let bytes = compress(&grid, &CompressOptions::new(1e-5)).unwrap();
    for cut in [3, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(bitprog::decompress(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn empty_plan_gives_zero_skeleton() {
    let grid = smooth_field::<f64>(&[20, 20, 20], 6).unwrap();
    let bytes = compress(&grid, &CompressOptions::new(1e-4)).unwrap();
    let index = read_header(&mut Cursor::new(&bytes)).unwrap();
    let model = ErrorModel::from_index(&index).unwrap();
    let planes = vec![0u8; index.levels.len()];
    let plan = RetrievalPlan {
        bytes: bitprog::archive::plan_bytes(&index, &planes),
        planes,
        bound: f64::NAN,
    };
    let out = reconstruct(&mut Cursor::new(&bytes), &index, &plan).unwrap();
    assert_eq!(out.bytes_read, 0);
    assert!(out.field.to_f64_vec().iter().all(|&v| v == 0.0));
    let err = max_abs_error(grid.values(), &out.field.to_f64_vec());
    assert!(err <= model.bound_for_plan(&plan).unwrap());
}
