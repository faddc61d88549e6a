//! File formats.
//!
//! * Input function CSV: `time_min,value`
//! * Frame scheme CSV: `t_start_min,t_end_min`
//! * DPET binary: magic `DPET`, then little-endian `u32` version (1), `nx`,
//!   `ny`, `nz` (1), `T`, followed by `nx*ny*T` `f64` values, frame-major.
//! * Truth CSV: `x,y,region_id,K1,k2`
//! * Parametric map CSV: `x,y,K1,k2,wrss,status`
//! * Labels CSV: `x,y,cluster_id`

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{Frame, FrameScheme, InputFunction, KineticParams};
use crate::phantom::{Dims, DynamicImage, Truth};

pub const DPET_MAGIC: &[u8; 4] = b"DPET";
pub const DPET_VERSION: u32 = 1;

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

pub(crate) fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn check_headers<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str], context: &str) -> Result<()> {
    let headers = rdr.headers()?;
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < want.len() || got[..want.len()] != *want {
        return Err(Error::parse(
            context,
            format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn parse_f64(field: &str, context: &str, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|e| Error::parse(context, format!("line {line}: `{field}`: {e}")))
}

fn parse_usize(field: &str, context: &str, line: usize) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|e| Error::parse(context, format!("line {line}: `{field}`: {e}")))
}

fn records<R: Read>(
    rdr: &mut csv::Reader<R>,
    width: usize,
    context: &str,
) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() < width {
            return Err(Error::parse(context, format!("line {line}: expected {width} fields")));
        }
        out.push((line, rec));
    }
    Ok(out)
}

pub fn read_input_csv<R: Read>(r: R) -> Result<InputFunction> {
    let ctx = "input function csv";
    let mut rdr = csv_reader(r);
    check_headers(&mut rdr, &["time_min", "value"], ctx)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in records(&mut rdr, 2, ctx)? {
        times.push(parse_f64(&rec[0], ctx, line)?);
        values.push(parse_f64(&rec[1], ctx, line)?);
    }
    InputFunction::new(times, values)
}

pub fn write_input_csv<W: Write>(w: W, input: &InputFunction) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["time_min", "value"])?;
    for (t, v) in input.times().iter().zip(input.values()) {
        wtr.write_record([t.to_string(), v.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_frames_csv<R: Read>(r: R) -> Result<FrameScheme> {
    let ctx = "frame scheme csv";
    let mut rdr = csv_reader(r);
    check_headers(&mut rdr, &["t_start_min", "t_end_min"], ctx)?;
    let mut frames = Vec::new();
    for (line, rec) in records(&mut rdr, 2, ctx)? {
        frames.push(Frame {
            start: parse_f64(&rec[0], ctx, line)?,
            end: parse_f64(&rec[1], ctx, line)?,
        });
    }
    FrameScheme::new(frames)
}

pub fn write_frames_csv<W: Write>(w: W, frames: &FrameScheme) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["t_start_min", "t_end_min"])?;
    for f in frames.frames() {
        wtr.write_record([f.start.to_string(), f.end.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dpet<W: Write>(mut w: W, img: &DynamicImage) -> Result<()> {
    let dims = img.dims();
    let mut buf = Vec::with_capacity(24 + img.data().len() * 8);
    buf.extend_from_slice(DPET_MAGIC);
    for v in [DPET_VERSION, dims.nx as u32, dims.ny as u32, 1, img.frame_count() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in img.frame_major() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_dpet<R: Read>(mut r: R) -> Result<DynamicImage> {
    let ctx = "dpet";
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..4] != DPET_MAGIC {
        return Err(Error::parse(ctx, "missing DPET magic"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let (version, nx, ny, nz, t) = (word(0), word(1), word(2), word(3), word(4));
    if version != DPET_VERSION {
        return Err(Error::parse(ctx, format!("unsupported version {version}")));
    }
    if nz != 1 {
        return Err(Error::parse(ctx, format!("only 2D images supported, nz = {nz}")));
    }
    let count = nx as usize * ny as usize * t as usize;
    let body = &bytes[24..];
    if body.len() != count * 8 {
        return Err(Error::parse(
            ctx,
            format!("expected {} data bytes, found {}", count * 8, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DynamicImage::from_frame_major(Dims::new(nx as usize, ny as usize), t as usize, &values)
}

pub fn write_truth_csv<W: Write>(w: W, dims: Dims, truth: &Truth) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["x", "y", "region_id", "K1", "k2"])?;
    for i in 0..dims.len() {
        let (x, y) = dims.coords(i);
        let p = truth.params[i];
        wtr.write_record([
            x.to_string(),
            y.to_string(),
            truth.region_id[i].to_string(),
            p.k1.to_string(),
            p.k2.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a truth CSV; voxels with `K1 = k2 = 0` are taken as background.
pub fn read_truth_csv<R: Read>(r: R, dims: Dims) -> Result<Truth> {
    let ctx = "truth csv";
    let mut rdr = csv_reader(r);
    check_headers(&mut rdr, &["x", "y", "region_id", "K1", "k2"], ctx)?;
    let n = dims.len();
    let mut seen = vec![false; n];
    let mut truth = Truth {
        region_id: vec![0; n],
        params: vec![KineticParams { k1: 0.0, k2: 0.0 }; n],
        noise: vec![false; n],
    };
    for (line, rec) in records(&mut rdr, 5, ctx)? {
        let x = parse_usize(&rec[0], ctx, line)?;
        let y = parse_usize(&rec[1], ctx, line)?;
        if x >= dims.nx || y >= dims.ny {
            return Err(Error::parse(ctx, format!("line {line}: voxel ({x}, {y}) out of range")));
        }
        let i = dims.index(x, y);
        let region = rec[2]
            .parse::<u32>()
            .map_err(|e| Error::parse(ctx, format!("line {line}: region_id: {e}")))?;
        let k1 = parse_f64(&rec[3], ctx, line)?;
        let k2 = parse_f64(&rec[4], ctx, line)?;
        truth.region_id[i] = region;
        truth.params[i] = KineticParams { k1, k2 };
        truth.noise[i] = k1 == 0.0 && k2 == 0.0;
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let (x, y) = dims.coords(i);
        return Err(Error::parse(ctx, format!("voxel ({x}, {y}) missing")));
    }
    Ok(truth)
}

/// Outcome of a per-voxel fit as written to map files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FitStatus {
    Converged,
    MaxIter,
    AtBound,
    Failed,
}

impl FitStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitStatus::Converged => "CONVERGED",
            FitStatus::MaxIter => "MAX_ITER",
            FitStatus::AtBound => "AT_BOUND",
            FitStatus::Failed => "FAILED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "CONVERGED" => FitStatus::Converged,
            "MAX_ITER" => FitStatus::MaxIter,
            "AT_BOUND" => FitStatus::AtBound,
            "FAILED" => FitStatus::Failed,
            _ => return None,
        })
    }
}

/// One row of a parametric map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEntry {
    pub params: KineticParams,
    pub wrss: f64,
    pub status: FitStatus,
}

/// Per-voxel parameter estimates in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricMap {
    pub dims: Dims,
    pub entries: Vec<MapEntry>,
}

impl ParametricMap {
    pub fn k1(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.params.k1).collect()
    }

    pub fn k2(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.params.k2).collect()
    }

    /// Single-frame image of one column, for DPET export.
    pub fn image_of(&self, values: Vec<f64>) -> Result<DynamicImage> {
        DynamicImage::new(self.dims, 1, values.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect())
    }
}

pub fn write_map_csv<W: Write>(w: W, map: &ParametricMap) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["x", "y", "K1", "k2", "wrss", "status"])?;
    for (i, e) in map.entries.iter().enumerate() {
        let (x, y) = map.dims.coords(i);
        wtr.write_record([
            x.to_string(),
            y.to_string(),
            e.params.k1.to_string(),
            e.params.k2.to_string(),
            e.wrss.to_string(),
            e.status.as_str().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a map CSV. Dimensions are inferred from the largest coordinates.
pub fn read_map_csv<R: Read>(r: R) -> Result<ParametricMap> {
    let ctx = "parametric map csv";
    let mut rdr = csv_reader(r);
    check_headers(&mut rdr, &["x", "y", "K1", "k2", "wrss", "status"], ctx)?;
    let mut rows = Vec::new();
    for (line, rec) in records(&mut rdr, 6, ctx)? {
        let x = parse_usize(&rec[0], ctx, line)?;
        let y = parse_usize(&rec[1], ctx, line)?;
        let k1 = parse_f64(&rec[2], ctx, line)?;
        let k2 = parse_f64(&rec[3], ctx, line)?;
        let wrss = parse_f64(&rec[4], ctx, line)?;
        let status = FitStatus::parse(&rec[5])
            .ok_or_else(|| Error::parse(ctx, format!("line {line}: unknown status `{}`", &rec[5])))?;
        rows.push((x, y, MapEntry { params: KineticParams { k1, k2 }, wrss, status }));
    }
    if rows.is_empty() {
        return Err(Error::parse(ctx, "no rows"));
    }
    let nx = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let ny = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let dims = Dims::new(nx, ny);
    let mut entries: Vec<Option<MapEntry>> = vec![None; dims.len()];
    for (x, y, e) in rows {
        entries[dims.index(x, y)] = Some(e);
    }
    let entries = entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            e.ok_or_else(|| {
                let (x, y) = dims.coords(i);
                Error::parse(ctx, format!("voxel ({x}, {y}) missing"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParametricMap { dims, entries })
}

/// Labels are written 1-based.
pub fn write_labels_csv<W: Write>(w: W, dims: Dims, labels: &[usize]) -> Result<()> {
    let mut wtr = csv_writer(w);
    wtr.write_record(["x", "y", "cluster_id"])?;
    for (i, l) in labels.iter().enumerate() {
        let (x, y) = dims.coords(i);
        wtr.write_record([x.to_string(), y.to_string(), (l + 1).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Returns 0-based labels.
pub fn read_labels_csv<R: Read>(r: R, dims: Dims) -> Result<Vec<usize>> {
    let ctx = "labels csv";
    let mut rdr = csv_reader(r);
    check_headers(&mut rdr, &["x", "y", "cluster_id"], ctx)?;
    let mut labels = vec![usize::MAX; dims.len()];
    for (line, rec) in records(&mut rdr, 3, ctx)? {
        let x = parse_usize(&rec[0], ctx, line)?;
        let y = parse_usize(&rec[1], ctx, line)?;
        let id = parse_usize(&rec[2], ctx, line)?;
        if x >= dims.nx || y >= dims.ny || id == 0 {
            return Err(Error::parse(ctx, format!("line {line}: bad row")));
        }
        labels[dims.index(x, y)] = id - 1;
    }
    if labels.contains(&usize::MAX) {
        return Err(Error::parse(ctx, "missing voxels"));
    }
    Ok(labels)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn load_input(path: &Path) -> Result<InputFunction> {
    read_input_csv(open(path)?)
}

pub fn save_input(path: &Path, input: &InputFunction) -> Result<()> {
    write_input_csv(create(path)?, input)
}

pub fn load_frames(path: &Path) -> Result<FrameScheme> {
    read_frames_csv(open(path)?)
}

pub fn save_frames(path: &Path, frames: &FrameScheme) -> Result<()> {
    write_frames_csv(create(path)?, frames)
}

pub fn load_dpet(path: &Path) -> Result<DynamicImage> {
    read_dpet(open(path)?)
}

pub fn save_dpet(path: &Path, img: &DynamicImage) -> Result<()> {
    write_dpet(create(path)?, img)
}

pub fn load_truth(path: &Path, dims: Dims) -> Result<Truth> {
    read_truth_csv(open(path)?, dims)
}

pub fn save_truth(path: &Path, dims: Dims, truth: &Truth) -> Result<()> {
    write_truth_csv(create(path)?, dims, truth)
}

pub fn load_map(path: &Path) -> Result<ParametricMap> {
    read_map_csv(open(path)?)
}

pub fn save_map(path: &Path, map: &ParametricMap) -> Result<()> {
    write_map_csv(create(path)?, map)
}

pub fn save_labels(path: &Path, dims: Dims, labels: &[usize]) -> Result<()> {
    write_labels_csv(create(path)?, dims, labels)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
