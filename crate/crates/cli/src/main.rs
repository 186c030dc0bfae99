use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use bitprog::archive::ArchiveIndex;
use bitprog::{
    compress_field, quality, read_header, reconstruct, refine, CompressOptions, ErrorModel, Field,
    InterpKind, RetrievalPlan, RetrievalSession, ScalarKind,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bitprog", version, about = "Error-bounded progressive compression of float fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a raw little-endian field.
    Compress(CompressArgs),
    /// Reconstruct a field at a requested fidelity.
    Retrieve(RetrieveArgs),
    /// Improve an earlier retrieval, loading only the missing planes.
    Refine(RefineArgs),
    /// Dump the archive header, level records and loss tables.
    Inspect(InspectArgs),
    /// Compare two raw fields.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalarArg {
    F32,
    F64,
}

impl From<ScalarArg> for ScalarKind {
    fn from(s: ScalarArg) -> Self {
        match s {
            ScalarArg::F32 => ScalarKind::F32,
            ScalarArg::F64 => ScalarKind::F64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    Linear,
    Cubic,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Extents, slowest-varying first.
    #[arg(short, long, num_args = 1..=4, required = true)]
    dims: Vec<usize>,
    #[arg(short = 't', long = "type", value_enum)]
    scalar: ScalarArg,
    /// Absolute error bound.
    #[arg(short = 'e', long, group = "bound")]
    abs_error: Option<f64>,
    /// Error bound relative to the value range.
    #[arg(short = 'r', long, group = "bound")]
    rel_error: Option<f64>,
    #[arg(long, value_enum, default_value = "cubic")]
    interp: InterpArg,
    /// First progressive level; coarser levels are always loaded in full.
    #[arg(long)]
    lp: Option<u32>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Fidelity {
    #[arg(long)]
    abs_error: Option<f64>,
    /// Error relative to the value range recorded at compression.
    #[arg(long)]
    rel_error: Option<f64>,
    /// Bits per value.
    #[arg(long)]
    bitrate: Option<f64>,
    #[arg(long)]
    bytes: Option<u64>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    fidelity: Fidelity,
    /// Where to save the state needed by a later refine.
    #[arg(long)]
    session: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Session written by the earlier retrieval; updated in place.
    #[arg(long)]
    session: PathBuf,
    /// Output of the earlier retrieval.
    #[arg(long)]
    prev: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    fidelity: Fidelity,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(short, long)]
    input: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    reconstructed: PathBuf,
    #[arg(short, long, num_args = 1..=4, required = true)]
    dims: Vec<usize>,
    #[arg(short = 't', long = "type", value_enum)]
    scalar: ScalarArg,
}

/// A request the archive cannot satisfy; reported as JSON with exit code 2.
#[derive(Debug)]
struct Infeasible(String);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Infeasible {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Some(inf) = e.downcast_ref::<Infeasible>() {
                println!("{}", json!({ "error": "infeasible", "reason": inf.0 }));
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("IPCOMP_THREADS") {
        let n: usize = v.parse().context("IPCOMP_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

/// JSON has no infinity; a perfect match is reported as null.
fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn read_field(path: &Path, kind: ScalarKind, dims: &[usize]) -> anyhow::Result<Field> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let expected = dims.iter().product::<usize>() * kind.width();
    if bytes.len() != expected {
        bail!(
            "{} holds {} bytes but {dims:?} {kind:?} needs {expected}",
            path.display(),
            bytes.len()
        );
    }
    Ok(Field::from_le_bytes(kind, dims.to_vec(), &bytes)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn open_archive(path: &Path) -> anyhow::Result<(BufReader<File>, ArchiveIndex)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let index = read_header(&mut r).with_context(|| format!("reading {}", path.display()))?;
    Ok((r, index))
}

fn cmd_compress(a: CompressArgs) -> anyhow::Result<Value> {
    let start = Instant::now();
    let field = read_field(&a.input, a.scalar.into(), &a.dims)?;
    let eb = match (a.abs_error, a.rel_error) {
        (Some(e), None) => e,
        (None, Some(r)) => {
            let (lo, hi) = field.value_range();
            if hi > lo {
                r * (hi - lo)
            } else {
                eprintln!("note: the field has zero range, using {r} as an absolute bound");
                r
            }
        }
        _ => bail!("give exactly one of --abs-error and --rel-error"),
    };
    let mut options = CompressOptions::new(eb).interp(match a.interp {
        InterpArg::Linear => InterpKind::Linear,
        InterpArg::Cubic => InterpKind::Cubic,
    });
    let levels = bitprog::grid::level_count(&a.dims, options.anchor_cap);
    if a.lp.is_some_and(|lp| lp == 0 || lp > levels) {
        eprintln!("note: --lp clamped to 1..={levels}");
    }
    options.progressive_from = a.lp.map(|lp| lp.clamp(1, levels));
    let archive = compress_field(&field, &options)?;
    write_file(&a.output, &archive)?;
    let original = (field.len() * field.scalar_kind().width()) as f64;
    Ok(json!({
        "original_bytes": original as u64,
        "compressed_bytes": archive.len(),
        "compression_ratio": original / archive.len() as f64,
        "bitrate": archive.len() as f64 * 8.0 / field.len() as f64,
        "eb": eb,
        "levels": levels,
        "seconds": start.elapsed().as_secs_f64(),
    }))
}

fn plan_request(index: &ArchiveIndex, f: &Fidelity) -> anyhow::Result<RetrievalPlan> {
    let request = [f.abs_error, f.rel_error, f.bitrate, f.bytes.map(|b| b as f64)];
    if request.iter().flatten().any(|v| !(*v > 0.0)) {
        bail!("fidelity request must be positive");
    }
    let model = ErrorModel::from_index(index)?;
    let values = index.header.dims.iter().product::<usize>() as f64;
    let planned = match (f.abs_error, f.rel_error, f.bitrate, f.bytes) {
        (Some(e), None, None, None) => model.plan_for_error(e),
        (None, Some(r), None, None) => model.plan_for_error(r * index.header.value_range()),
        (None, None, Some(b), None) => model.plan_for_size((b * values / 8.0).floor() as u64),
        (None, None, None, Some(s)) => model.plan_for_size(s),
        _ => bail!("give exactly one fidelity request"),
    };
    match planned {
        Err(bitprog::Error::Infeasible(reason)) => Err(Infeasible(reason).into()),
        other => Ok(other?),
    }
}

fn retrieval_summary(index: &ArchiveIndex, plan: &RetrievalPlan, loaded: u64) -> Value {
    let values = index.header.dims.iter().product::<usize>() as f64;
    json!({
        "bytes_loaded": loaded,
        "plan_bytes": plan.bytes,
        "estimated_bound": plan.bound,
        "bitrate": plan.bytes as f64 * 8.0 / values,
        "planes": plan.planes,
    })
}

fn cmd_retrieve(a: RetrieveArgs) -> anyhow::Result<Value> {
    let start = Instant::now();
    let (mut r, index) = open_archive(&a.input)?;
    let plan = plan_request(&index, &a.fidelity)?;
    let out = reconstruct(&mut r, &index, &plan)?;
    write_file(&a.output, &out.field.to_le_bytes())?;
    if let Some(path) = &a.session {
        write_file(path, &out.session.to_bytes()?)?;
    }
    let mut summary = retrieval_summary(&index, &plan, out.bytes_read);
    summary["seconds"] = json!(start.elapsed().as_secs_f64());
    Ok(summary)
}

fn cmd_refine(a: RefineArgs) -> anyhow::Result<Value> {
    let start = Instant::now();
    let (mut r, index) = open_archive(&a.input)?;
    let session_bytes =
        std::fs::read(&a.session).with_context(|| format!("reading {}", a.session.display()))?;
    let session = RetrievalSession::from_bytes(&session_bytes)?;
    let previous = read_field(&a.prev, index.header.scalar, &index.header.dims)?;
    let requested = plan_request(&index, &a.fidelity)?;

    // never drop what is already loaded
    let planes: Vec<u8> = requested
        .planes
        .iter()
        .zip(session.planes())
        .map(|(&want, have)| want.max(have))
        .collect();
    let model = ErrorModel::from_index(&index)?;
    let mut plan = RetrievalPlan {
        bytes: bitprog::archive::plan_bytes(&index, &planes),
        planes,
        bound: 0.0,
    };
    plan.bound = model.bound_for_plan(&plan)?;

    let out = refine(&mut r, &index, &session, &previous, &plan)?;
    write_file(&a.output, &out.field.to_le_bytes())?;
    write_file(&a.session, &out.session.to_bytes()?)?;
    let mut summary = retrieval_summary(&index, &plan, out.bytes_read);
    summary["incremental_bytes"] = json!(out.bytes_read);
    summary["seconds"] = json!(start.elapsed().as_secs_f64());
    Ok(summary)
}

fn cmd_inspect(a: InspectArgs) -> anyhow::Result<Value> {
    let (_, index) = open_archive(&a.input)?;
    let h = &index.header;
    eprintln!(
        "{:?} {:?} dims {:?} eb {:e} levels {} progressive from {} anchor stride {}",
        h.scalar,
        h.interp,
        h.dims,
        h.eb,
        h.levels,
        h.progressive_from,
        1u64 << h.anchor_cap
    );
    eprintln!("{:>5} {:>12} {:>9} {:>12} {:>12}", "level", "points", "outliers", "bytes", "delta[16]");
    let mut levels = Vec::new();
    for l in (1..=h.levels as u32).rev() {
        let rec = index.level(l);
        eprintln!(
            "{l:>5} {:>12} {:>9} {:>12} {:>12.4e}",
            rec.count,
            rec.outlier_count,
            rec.loaded_size(32),
            rec.delta[16]
        );
        levels.push(json!({
            "level": l,
            "count": rec.count,
            "outliers": rec.outlier_count,
            "outlier_bytes": rec.outliers.len,
            "plane_bytes": rec.planes.iter().map(|p| p.len).collect::<Vec<_>>(),
            "delta": rec.delta.to_vec(),
        }));
    }
    Ok(json!({
        "scalar": format!("{:?}", h.scalar).to_lowercase(),
        "interp": format!("{:?}", h.interp).to_lowercase(),
        "dims": h.dims,
        "eb": h.eb,
        "levels": h.levels,
        "progressive_from": h.progressive_from,
        "anchor_stride": 1u64 << h.anchor_cap,
        "value_min": h.value_min,
        "value_max": h.value_max,
        "payload_bytes": h.payload_len,
        "archive_bytes": index.total_size(),
        "level_records": levels,
    }))
}

fn cmd_metrics(a: MetricsArgs) -> anyhow::Result<Value> {
    let kind = a.scalar.into();
    let original = read_field(&a.original, kind, &a.dims)?;
    let reconstructed = read_field(&a.reconstructed, kind, &a.dims)?;
    let q = quality(&original, &reconstructed)?;
    Ok(json!({
        "max_err": q.max_error,
        "psnr": finite_or_null(q.psnr),
        "mse": q.mse,
    }))
}
