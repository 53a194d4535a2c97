//! CSV writers for paths, grids and tables. Floats use the shortest
//! representation that parses back to the same bits.

use std::io::Write;

use crate::error::Result;
use crate::levelset::LevelSetPath;
use crate::predictions::StabilityMap;

/// Shortest round-trip text for `x`: plain decimal for `1e-5 <= |x| < 1e16`,
/// scientific otherwise.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Header for an `n`-channel path table.
pub fn path_header(n: usize) -> Vec<String> {
    let mut h = vec!["param".to_string()];
    h.extend((0..n).map(|k| format!("q{k}")));
    h.push("S_drift".into());
    for prefix in ["beta", "zeta", "zT"] {
        h.extend((0..n).map(|k| format!("{prefix}{k}")));
    }
    h
}

pub fn write_path_csv<W: Write>(w: W, path: &LevelSetPath) -> Result<()> {
    let n = path.dim();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(path_header(n))?;
    for s in &path.samples {
        let mut row = vec![fmt_f64(s.param)];
        row.extend(s.q.iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(s.s_drift));
        row.extend(s.beta.iter().map(|v| fmt_f64(*v)));
        row.extend(s.zeta.iter().map(|v| fmt_f64(*v)));
        row.extend((0..n).map(|k| fmt_f64(s.zeta[k] / s.beta[k])));
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_stability_csv<W: Write>(w: W, map: &StabilityMap) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["V", "sigma", "det_g", "stable", "critical"])?;
    for c in &map.cells {
        let flag = |b: bool, valid: bool| {
            if valid {
                u8::from(b).to_string()
            } else {
                String::new()
            }
        };
        out.write_record([
            fmt_f64(c.v),
            fmt_f64(c.sigma),
            fmt_f64(c.det_g),
            flag(c.stable, c.valid),
            flag(c.critical, c.valid),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Contour vertices with their polyline index and critical stress ratio.
pub fn write_contour_csv<W: Write>(w: W, map: &StabilityMap, stress_ratio: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["V", "sigma", "line", "M"])?;
    let mut k = 0;
    for (line, poly) in map.contour.iter().enumerate() {
        for p in poly {
            let m = stress_ratio.get(k).copied().unwrap_or(f64::NAN);
            out.write_record([fmt_f64(p.v), fmt_f64(p.sigma), line.to_string(), fmt_f64(m)])?;
            k += 1;
        }
    }
    out.flush()?;
    Ok(())
}

/// Generic numeric table; `None` cells are left empty.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r.iter().map(Cell::render))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => u8::from(*b).to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}
