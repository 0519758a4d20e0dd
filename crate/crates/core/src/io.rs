//! On-disk formats. Every file starts with one text header line of
//! `key=value` tokens followed by little-endian binary payload, x-fastest.
//!
//! - `LAPK-VOL v1 nx= ny= nz= kind=real|complex`: float32 per voxel, complex
//!   interleaved re, im.
//! - `LAPK-FLOW v1 nx= ny= nz=`: float32 triples, then one reliability byte per voxel.
//! - `LAPK-MASK v1 nx= ny= nz= kind= rtarget= seed=`: kept flags packed eight per
//!   byte, least significant bit first.
//!
//! Predictions are plain CSV with columns `index,ux,uy,uz`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{voxel_count, Dims, FlowField, Grid, KSpace, Volume};
use crate::sampling::{MaskKind, SamplingMask};

pub(crate) struct Header {
    pub magic: String,
    pub fields: HashMap<String, String>,
}

impl Header {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("{} header lacks '{key}'", self.magic)))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Format(format!("bad value '{v}' for '{key}'")))
    }

    pub fn dims(&self) -> Result<Dims> {
        let d = [self.parse("nx")?, self.parse("ny")?, self.parse("nz")?];
        if d.contains(&0) {
            return Err(Error::Format(format!("empty dims {d:?}")));
        }
        Ok(d)
    }
}

/// Reads one `\n`-terminated header line and checks its two leading tokens.
pub(crate) fn read_header(r: &mut impl BufRead, magic: &str, version: &str) -> Result<Header> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(magic) {
        return Err(Error::Format(format!("expected a {magic} file")));
    }
    if tokens.next() != Some(version) {
        return Err(Error::Format(format!("unsupported {magic} version")));
    }
    let mut fields = HashMap::new();
    for t in tokens {
        let (k, v) = t.split_once('=').ok_or_else(|| Error::Format(format!("malformed header token '{t}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    Ok(Header { magic: magic.to_string(), fields })
}

fn dims_tokens(d: Dims) -> String {
    format!("nx={} ny={} nz={}", d[0], d[1], d[2])
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn write_f32s(w: &mut impl Write, values: impl IntoIterator<Item = f32>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file truncated".into())
    } else {
        Error::Io(e)
    }
}

fn expect_end(r: &mut impl Read) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

fn narrow(v: f64) -> Result<f32> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("{v} does not fit a float32")));
    }
    Ok(f)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    v.check_finite()?;
    let values: Vec<f32> = v.data().iter().map(|&x| narrow(x)).collect::<Result<_>>()?;
    let mut w = create(path.as_ref())?;
    writeln!(w, "LAPK-VOL v1 {} kind=real", dims_tokens(v.dims()))?;
    write_f32s(&mut w, values)?;
    w.flush()?;
    Ok(())
}

pub fn write_kspace(path: impl AsRef<Path>, k: &KSpace) -> Result<()> {
    k.check_finite()?;
    let mut values = Vec::with_capacity(2 * k.len());
    for c in k.data() {
        values.push(narrow(c.re)?);
        values.push(narrow(c.im)?);
    }
    let mut w = create(path.as_ref())?;
    writeln!(w, "LAPK-VOL v1 {} kind=complex", dims_tokens(k.dims()))?;
    write_f32s(&mut w, values)?;
    w.flush()?;
    Ok(())
}

/// Contents of a `LAPK-VOL` file.
#[derive(Clone, Debug, PartialEq)]
pub enum VolumeFile {
    Real(Volume),
    Complex(KSpace),
}

pub fn read_volume_file(path: impl AsRef<Path>) -> Result<VolumeFile> {
    let mut r = open(path.as_ref())?;
    let h = read_header(&mut r, "LAPK-VOL", "v1")?;
    let d = h.dims()?;
    let n = voxel_count(d);
    let out = match h.get("kind")? {
        "real" => VolumeFile::Real(Grid::from_vec(d, read_f32s(&mut r, n)?.into_iter().map(f64::from).collect())?),
        "complex" => {
            let raw = read_f32s(&mut r, 2 * n)?;
            VolumeFile::Complex(Grid::from_vec(
                d,
                raw.chunks_exact(2).map(|c| Complex64::new(c[0] as f64, c[1] as f64)).collect(),
            )?)
        }
        other => return Err(Error::Format(format!("unknown volume kind '{other}'"))),
    };
    expect_end(&mut r)?;
    Ok(out)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    match read_volume_file(path)? {
        VolumeFile::Real(v) => Ok(v),
        VolumeFile::Complex(_) => Err(Error::Format("expected a real volume".into())),
    }
}

/// Reads a k-space; a real file is promoted to complex.
pub fn read_kspace(path: impl AsRef<Path>) -> Result<KSpace> {
    match read_volume_file(path)? {
        VolumeFile::Real(v) => Ok(v.to_complex()),
        VolumeFile::Complex(k) => Ok(k),
    }
}

pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let mut values = Vec::with_capacity(3 * flow.len());
    for v in flow.vectors() {
        for &c in v {
            values.push(narrow(c)?);
        }
    }
    let mut w = create(path.as_ref())?;
    writeln!(w, "LAPK-FLOW v1 {}", dims_tokens(flow.dims()))?;
    write_f32s(&mut w, values)?;
    let flags: Vec<u8> = flow.reliable().iter().map(|&b| b as u8).collect();
    w.write_all(&flags)?;
    w.flush()?;
    Ok(())
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let mut r = open(path.as_ref())?;
    let h = read_header(&mut r, "LAPK-FLOW", "v1")?;
    let d = h.dims()?;
    let n = voxel_count(d);
    let raw = read_f32s(&mut r, 3 * n)?;
    let mut flags = vec![0u8; n];
    r.read_exact(&mut flags).map_err(truncated)?;
    expect_end(&mut r)?;
    if flags.iter().any(|&b| b > 1) {
        return Err(Error::Format("reliability byte must be 0 or 1".into()));
    }
    let vectors = raw.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    FlowField::with_reliability(d, vectors, flags.into_iter().map(|b| b == 1).collect())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(
        w,
        "LAPK-MASK v1 {} kind={} rtarget={} seed={}",
        dims_tokens(mask.dims()),
        mask.kind(),
        mask.r_target(),
        mask.seed()
    )?;
    let mut bytes = vec![0u8; mask.kept().len().div_ceil(8)];
    for (i, &k) in mask.kept().iter().enumerate() {
        if k {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    let mut r = open(path.as_ref())?;
    let h = read_header(&mut r, "LAPK-MASK", "v1")?;
    let d = h.dims()?;
    let kind: MaskKind = h.get("kind")?.parse().map_err(|_| Error::Format("bad mask kind".into()))?;
    let r_target: f64 = h.parse("rtarget")?;
    let seed: u64 = h.parse("seed")?;
    let n = voxel_count(d);
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes).map_err(truncated)?;
    expect_end(&mut r)?;
    let kept = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    SamplingMask::from_parts(d, kept, kind, r_target, seed)
}

/// One line of a predictions CSV. NaN marks a component nobody predicted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionRow {
    pub index: usize,
    pub u: [f64; 3],
}

pub fn write_predictions(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    let mut w = create(path.as_ref())?;
    writeln!(w, "index,ux,uy,uz")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.index, r.u[0], r.u[1], r.u[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let r = open(path.as_ref())?;
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "index,ux,uy,uz" {
        return Err(Error::Format(format!("unexpected predictions header '{header}'")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("predictions line {}: '{line}'", n + 2));
        if cols.len() != 4 {
            return Err(bad());
        }
        let index = cols[0].parse().map_err(|_| bad())?;
        let mut u = [0.0; 3];
        for a in 0..3 {
            u[a] = cols[a + 1].parse().map_err(|_| bad())?;
        }
        rows.push(PredictionRow { index, u });
    }
    Ok(rows)
}

/// 2D prediction of one orientation run at a patch centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunPrediction {
    pub index: usize,
    pub center: [i32; 3],
    /// 1 sees (x, y), 2 sees (y, z).
    pub orientation: i32,
    pub u: [f64; 2],
}

/// Pairs run-1 and run-2 predictions sharing a centre and merges them with
/// [`merge_orthogonal_runs`](crate::lap_kspace::merge_orthogonal_runs). A
/// centre seen by one run only keeps its two in-plane components and NaN for
/// the unseen axis. Rows are labelled with the index of the first prediction
/// of their centre and come out in that order.
pub fn merge_run_predictions(preds: &[RunPrediction]) -> Result<Vec<PredictionRow>> {
    let mut by_center: Vec<([i32; 3], Option<RunPrediction>, Option<RunPrediction>)> = Vec::new();
    let mut lookup: HashMap<[i32; 3], usize> = HashMap::new();
    for p in preds {
        let slot = *lookup.entry(p.center).or_insert_with(|| {
            by_center.push((p.center, None, None));
            by_center.len() - 1
        });
        let entry = &mut by_center[slot];
        let target = match p.orientation {
            1 => &mut entry.1,
            2 => &mut entry.2,
            o => return Err(Error::InvalidParameter(format!("orientation {o} (expected 1 or 2)"))),
        };
        if target.is_some() {
            return Err(Error::InvalidParameter(format!(
                "two run-{} predictions at centre {:?}",
                p.orientation, p.center
            )));
        }
        *target = Some(*p);
    }
    Ok(by_center
        .into_iter()
        .map(|(_, r1, r2)| match (r1, r2) {
            (Some(a), Some(b)) => PredictionRow {
                index: a.index.min(b.index),
                u: crate::lap_kspace::merge_orthogonal_runs((a.u[0], a.u[1]), (b.u[0], b.u[1])),
            },
            (Some(a), None) => PredictionRow { index: a.index, u: [a.u[0], a.u[1], f64::NAN] },
            (None, Some(b)) => PredictionRow { index: b.index, u: [f64::NAN, b.u[0], b.u[1]] },
            (None, None) => unreachable!("every centre has a prediction"),
        })
        .collect())
}
