//! Field export: long-format CSV, tagged flat binary and JSON sidecars.
//!
//! The binary layout is the noise-sheet layout with a leading field tag:
//! little-endian `u64 tag`, `u64 N`, `u64 m`, then `(N + 1) m` `f64` values
//! row-major in time.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::noise::{read_f64s, read_header};
use crate::solver::{FieldPath, PathMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Solution,
    StochasticConvolution,
    Transformed,
    Derivative,
    IntegratedDerivative,
}

impl FieldKind {
    pub fn tag(self) -> u64 {
        match self {
            FieldKind::Solution => 1,
            FieldKind::StochasticConvolution => 2,
            FieldKind::Transformed => 3,
            FieldKind::Derivative => 4,
            FieldKind::IntegratedDerivative => 5,
        }
    }

    pub fn from_tag(tag: u64) -> Result<Self> {
        Ok(match tag {
            1 => FieldKind::Solution,
            2 => FieldKind::StochasticConvolution,
            3 => FieldKind::Transformed,
            4 => FieldKind::Derivative,
            5 => FieldKind::IntegratedDerivative,
            _ => return Err(Error::Format(format!("unknown field tag {tag}"))),
        })
    }
}

/// Rows `t,x,u` including the header.
pub fn write_path_csv<W: Write>(path: &FieldPath, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "x", "u"])?;
    for i in 0..=path.time().steps() {
        let t = path.time().t(i);
        for j in 0..path.space().len() {
            w.serialize((t, path.space().node(j), path.value(i, j)))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_path_binary<W: Write>(path: &FieldPath, kind: FieldKind, mut w: W) -> Result<()> {
    w.write_all(&kind.tag().to_le_bytes())?;
    w.write_all(&(path.time().steps() as u64).to_le_bytes())?;
    w.write_all(&(path.space().len() as u64).to_le_bytes())?;
    for v in path.rows().iter().flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_path_binary<R: Read>(mut r: R, horizon: f64) -> Result<(FieldKind, FieldPath)> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    let kind = FieldKind::from_tag(u64::from_le_bytes(buf))?;
    let (n, m) = read_header(&mut r)?;
    let flat = read_f64s(&mut r, (n + 1) * m)?;
    let rows = flat.chunks(m).map(<[f64]>::to_vec).collect();
    let path = FieldPath::new(
        TimeGrid::new(horizon, n)?,
        SpatialGrid::new(m)?,
        rows,
        PathMeta::default(),
    )?;
    Ok((kind, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub m: usize,
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl GridInfo {
    pub fn of(path: &FieldPath) -> Self {
        Self {
            m: path.space().len(),
            n: path.time().steps(),
            h: path.space().h(),
            dt: path.time().dt(),
            horizon: path.time().horizon(),
        }
    }
}

/// Sidecar written next to an exported field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: FieldKind,
    pub meta: PathMeta,
    pub grid: GridInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl Sidecar {
    pub fn new(kind: FieldKind, path: &FieldPath) -> Self {
        Self {
            kind,
            meta: path.meta.clone(),
            grid: GridInfo::of(path),
            tol: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_path() -> FieldPath {
        let space = SpatialGrid::new(5).unwrap();
        let time = TimeGrid::new(0.5, 4).unwrap();
        let rows = (0..=4)
            .map(|i| (0..5).map(|j| (i * 10 + j) as f64 * 0.1).collect())
            .collect();
        FieldPath::new(time, space, rows, PathMeta::default()).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let p = sample_path();
        let mut buf = Vec::new();
        write_path_binary(&p, FieldKind::Derivative, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 5 * 5 * 8);
        let (kind, q) = read_path_binary(&buf[..], 0.5).unwrap();
        assert_eq!(kind, FieldKind::Derivative);
        assert_eq!(q.rows(), p.rows());
    }

    #[test]
    fn binary_rejects_bad_tag_and_truncation() {
        let p = sample_path();
        let mut buf = Vec::new();
        write_path_binary(&p, FieldKind::Solution, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = 99;
        assert!(read_path_binary(&bad[..], 0.5).is_err());
        assert!(read_path_binary(&buf[..buf.len() - 3], 0.5).is_err());
    }

    #[test]
    fn csv_has_header_and_all_points() {
        let p = sample_path();
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,u"));
        assert_eq!(lines.count(), 25);
    }

    #[test]
    fn sidecar_is_json() {
        let p = sample_path();
        let mut buf = Vec::new();
        Sidecar::new(FieldKind::Solution, &p).write(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["grid"]["m"], 5);
        assert_eq!(v["kind"], "solution");
    }
}
