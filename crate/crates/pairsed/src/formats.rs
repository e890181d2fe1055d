//! On-disk formats: trajectory CSV, snapshot JSONL, JSON reports, and binary grid dumps.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use pairsed_core::meso::{FField, GridSpec, Interp, OutsidePolicy};
use pairsed_core::micro::Snapshot;
use pairsed_core::Vec3;
use serde::{Deserialize, Serialize};

/// Version stamped into every emitted file.
pub const FORMAT_VERSION: u32 = 1;

/// Magic bytes opening a grid dump.
pub const GRID_MAGIC: &[u8; 4] = b"FGRD";

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "t", "i", "xp_x", "xp_y", "xp_z", "xi_x", "xi_y", "xi_z", "xi_norm",
];

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },
}

fn malformed(what: &'static str, reason: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        what,
        reason: reason.into(),
    }
}

/// One row of the trajectory table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub i: usize,
    pub center: Vec3,
    pub xi: Vec3,
}

/// Writes `# format_version=N` followed by one CSV row per pair per snapshot.
pub fn write_trajectory_csv(path: &Path, snapshots: &[Snapshot]) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# format_version={FORMAT_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for s in snapshots {
        let st = &s.state;
        for (i, (c, x)) in st.centers.iter().zip(&st.xi).enumerate() {
            let mut rec = Vec::with_capacity(9);
            rec.push(st.time.to_string());
            rec.push(i.to_string());
            rec.extend(c.0.iter().map(f64::to_string));
            rec.extend(x.0.iter().map(f64::to_string));
            rec.push(x.norm().to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, FormatError> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    let version = first
        .trim()
        .strip_prefix("# format_version=")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| malformed("trajectory", "missing format_version line"))?;
    if version != FORMAT_VERSION {
        return Err(malformed("trajectory", format!("unsupported version {version}")));
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    if r.headers()?.iter().ne(TRAJECTORY_HEADER) {
        return Err(malformed("trajectory", "unexpected header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64, FormatError> {
            rec.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed("trajectory", format!("bad field {k}")))
        };
        rows.push(TrajectoryRow {
            t: num(0)?,
            i: rec[1]
                .parse()
                .map_err(|_| malformed("trajectory", "bad index"))?,
            center: Vec3::new(num(2)?, num(3)?, num(4)?),
            xi: Vec3::new(num(5)?, num(6)?, num(7)?),
        });
    }
    Ok(rows)
}

/// A line of the snapshot stream.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SnapshotRecord {
    pub format_version: u32,
    pub t: f64,
    pub d_min: f64,
    pub w_inf: f64,
    pub ratio2: f64,
    pub ratio3: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub flags: Vec<String>,
    pub centers: Vec<[f64; 3]>,
    pub xi: Vec<[f64; 3]>,
}

impl From<&Snapshot> for SnapshotRecord {
    fn from(s: &Snapshot) -> Self {
        let d = &s.diagnostics;
        SnapshotRecord {
            format_version: FORMAT_VERSION,
            t: s.state.time,
            d_min: d.d_min,
            w_inf: d.w_inf_proxy,
            ratio2: d.ratio2,
            ratio3: d.ratio3,
            xi_min: d.xi_min,
            xi_max: d.xi_max,
            flags: d.flags.iter().map(|f| f.as_str().to_string()).collect(),
            centers: s.state.centers.iter().map(|v| v.0).collect(),
            xi: s.state.xi.iter().map(|v| v.0).collect(),
        }
    }
}

pub fn write_snapshots_jsonl(path: &Path, snapshots: &[Snapshot]) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in snapshots {
        serde_json::to_writer(&mut out, &SnapshotRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshots_jsonl(path: &Path) -> Result<Vec<SnapshotRecord>, FormatError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// JSON header of a grid dump.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub format_version: u32,
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub components: usize,
    pub time: f64,
    pub interp: String,
}

/// `FGRD`, a little-endian `u32` header length, the JSON header, then the node values as
/// little-endian `f64`, x fastest, three components per node.
pub fn write_grid(path: &Path, field: &FField, time: f64) -> Result<(), FormatError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_grid_to(&mut out, field, time)?;
    out.flush()?;
    Ok(())
}

pub fn write_grid_to(out: &mut impl Write, field: &FField, time: f64) -> Result<(), FormatError> {
    let g = &field.grid;
    let header = GridHeader {
        format_version: FORMAT_VERSION,
        dims: g.dims,
        origin: g.origin.0,
        spacing: g.spacing,
        components: 3,
        time,
        interp: match field.interp {
            Interp::Trilinear => "trilinear",
            Interp::Tricubic => "tricubic",
        }
        .into(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| malformed("grid", "header too long"))?;
    out.write_all(GRID_MAGIC)?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&json)?;
    for v in &field.values {
        for c in v.0 {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a grid dump back; returns the field and its time stamp.
pub fn read_grid(path: &Path) -> Result<(FField, f64), FormatError> {
    read_grid_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_grid_from(input: &mut impl Read) -> Result<(FField, f64), FormatError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(malformed("grid", "bad magic"));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let h: GridHeader = serde_json::from_slice(&json)?;
    if h.format_version != FORMAT_VERSION {
        return Err(malformed("grid", format!("unsupported version {}", h.format_version)));
    }
    if h.components != 3 {
        return Err(malformed("grid", "expected three components"));
    }
    let interp = match h.interp.as_str() {
        "trilinear" => Interp::Trilinear,
        "tricubic" => Interp::Tricubic,
        other => return Err(malformed("grid", format!("unknown interpolation {other}"))),
    };
    let nodes = h
        .dims
        .iter()
        .try_fold(1usize, |a, d| a.checked_mul(*d))
        .ok_or_else(|| malformed("grid", "dims overflow"))?;
    let mut buf = vec![0u8; nodes * 24];
    input.read_exact(&mut buf)?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(malformed("grid", "trailing bytes"));
    }
    let values = buf
        .chunks_exact(24)
        .map(|c| {
            Vec3(std::array::from_fn(|k| {
                f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().expect("8 bytes"))
            }))
        })
        .collect();
    let field = FField {
        grid: GridSpec {
            origin: Vec3(h.origin),
            spacing: h.spacing,
            dims: h.dims,
        },
        values,
        interp,
        outside: OutsidePolicy::Error,
    };
    Ok((field, h.time))
}
