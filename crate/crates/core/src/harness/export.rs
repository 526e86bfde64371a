//! CSV interchange. Every file has a header row with SI units in the column
//! names.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::comag::ComagReading;
use crate::error::Result;
use crate::noise::{AllanPoint, SpectralEstimate};
use crate::protocol::GyroSample;
use crate::spin::TransitionTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroRow {
    pub t_s: f64,
    pub s_n: f64,
    pub s_p: f64,
    pub delta_omega_rad_s: f64,
}

impl From<&GyroSample> for GyroRow {
    fn from(g: &GyroSample) -> Self {
        Self {
            t_s: g.t,
            s_n: g.s_n,
            s_p: g.s_p,
            delta_omega_rad_s: g.delta_omega,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComagRow {
    pub t_s: f64,
    pub f_minus_hz: f64,
    pub f_plus_hz: f64,
    /// Absolute field estimate.
    pub b_nt: f64,
    pub dt_k: f64,
}

impl From<&ComagReading> for ComagRow {
    fn from(r: &ComagReading) -> Self {
        Self {
            t_s: r.t,
            f_minus_hz: r.f_minus,
            f_plus_hz: r.f_plus,
            b_nt: r.b_est * 1e9,
            dt_k: r.dt_est,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrRow {
    pub label: String,
    pub m_s_pair: String,
    pub m_i: String,
    pub freq_hz: f64,
}

pub fn odmr_rows(table: &TransitionTable) -> Vec<OdmrRow> {
    table
        .lines
        .iter()
        .map(|l| OdmrRow {
            label: l.label.clone(),
            m_s_pair: l.ms_pair(),
            m_i: l.mi_pair(),
            freq_hz: l.freq_hz,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyRow {
    pub tau_s: f64,
    pub signal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizeRow {
    pub iteration: usize,
    pub p_mi0: f64,
    pub p_mi0_recursion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsdRow {
    pub freq_hz: f64,
    pub asd: f64,
}

pub fn asd_rows(s: &SpectralEstimate) -> Vec<AsdRow> {
    s.frequencies
        .iter()
        .zip(&s.asd)
        .map(|(&freq_hz, &asd)| AsdRow { freq_hz, asd })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllanRow {
    pub tau_s: f64,
    pub adev: f64,
}

pub fn allan_rows(points: &[AllanPoint]) -> Vec<AllanRow> {
    points
        .iter()
        .map(|p| AllanRow {
            tau_s: p.tau,
            adev: p.adev,
        })
        .collect()
}

pub fn write_rows<T: Serialize, W: Write>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_rows(std::io::BufWriter::new(file), rows)
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_rows(std::fs::File::open(path)?)
}

/// Reads one numeric column and the `t_s` column from a CSV file.
pub fn read_column(path: impl AsRef<Path>, column: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| crate::Error::Config {
            path: "analysis.column".into(),
            reason: format!("column `{name}` not found; available: {}", headers.iter().collect::<Vec<_>>().join(", ")),
        })
    };
    let it = find("t_s")?;
    let iv = find(column)?;
    let mut t = Vec::new();
    let mut v = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| crate::Error::Config {
                path: format!("csv column {}", &headers[i]),
                reason: e.to_string(),
            })
        };
        t.push(parse(it)?);
        v.push(parse(iv)?);
    }
    Ok((t, v))
}
