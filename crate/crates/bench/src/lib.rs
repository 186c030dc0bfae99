//! Shared fixtures for the benchmarks.

use bitprog::synth::smooth_field;
use bitprog::{compress, read_header, ArchiveIndex, CompressOptions, FieldGrid};

pub struct Fixture {
    pub grid: FieldGrid<f64>,
    pub eb: f64,
    pub archive: Vec<u8>,
    pub index: ArchiveIndex,
}

/// A smooth cube of side `n` compressed at `rel` times its value range.
pub fn cube(n: usize, rel: f64) -> Fixture {
    let grid = smooth_field::<f64>(&[n, n, n], 42).expect("valid shape");
    let (lo, hi) = grid.value_range();
    let eb = rel * (hi - lo);
    let archive = compress(&grid, &CompressOptions::new(eb)).expect("compressible");
    let index = read_header(&mut archive.as_slice()).expect("fresh archive parses");
    Fixture {
        grid,
        eb,
        archive,
        index,
    }
}
