//! Entropy tabulated on a uniform rectangular grid, interpolated by a
//! natural bicubic (tensor-product cubic) spline.
//!
//! File format: CSV with header `q0,q1,S`, rows ordered with `q0` as the
//! outer index.

use std::io::Read;
use std::path::Path;

use crate::error::{McteError, Result};
use crate::surface::ScalarField;

/// Relative tolerance on uniform grid spacing.
pub const SPACING_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TabulatedSurface {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// `values[ix][iy]`
    values: Vec<Vec<f64>>,
    /// Second derivatives in `y` of each row's natural spline.
    row_d2: Vec<Vec<f64>>,
}

/// Second derivatives of the natural cubic spline through `(xs, ys)`.
fn natural_d2(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut d2 = vec![0.0; n];
    let mut u = vec![0.0; n];
    for i in 1..n - 1 {
        let sig = (xs[i] - xs[i - 1]) / (xs[i + 1] - xs[i - 1]);
        let p = sig * d2[i - 1] + 2.0;
        d2[i] = (sig - 1.0) / p;
        let slope =
            (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]) - (ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
        u[i] = (6.0 * slope / (xs[i + 1] - xs[i - 1]) - sig * u[i - 1]) / p;
    }
    d2[n - 1] = 0.0;
    for k in (0..n - 1).rev() {
        d2[k] = d2[k] * d2[k + 1] + u[k];
    }
    d2
}

fn spline_eval(xs: &[f64], ys: &[f64], d2: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let h = xs[1] - xs[0];
    let k = (((x - xs[0]) / h).floor() as isize).clamp(0, n as isize - 2) as usize;
    let (lo, hi) = (k, k + 1);
    let h = xs[hi] - xs[lo];
    let a = (xs[hi] - x) / h;
    let b = (x - xs[lo]) / h;
    a * ys[lo] + b * ys[hi] + ((a * a * a - a) * d2[lo] + (b * b * b - b) * d2[hi]) * h * h / 6.0
}

fn check_uniform(axis: &[f64], name: &str) -> Result<()> {
    if axis.len() < 4 {
        return Err(McteError::InvalidInput(format!(
            "tabulated grid needs at least 4 distinct {name} values, found {}",
            axis.len()
        )));
    }
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(McteError::InvalidInput(format!("{name} must increase")));
    }
    for w in axis.windows(2) {
        if ((w[1] - w[0]) - h).abs() > SPACING_TOL * h {
            return Err(McteError::InvalidInput(format!(
                "{name} spacing is not uniform: step {} vs {h}",
                w[1] - w[0]
            )));
        }
    }
    Ok(())
}

impl TabulatedSurface {
    /// Build from axes and `values[ix][iy]`.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_uniform(&xs, "q0")?;
        check_uniform(&ys, "q1")?;
        if values.len() != xs.len() || values.iter().any(|r| r.len() != ys.len()) {
            return Err(McteError::InvalidInput(
                "value table does not match the axes".into(),
            ));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(McteError::InvalidInput("tabulated S must be finite".into()));
        }
        let row_d2 = values.iter().map(|row| natural_d2(&ys, row)).collect();
        Ok(Self {
            xs,
            ys,
            values,
            row_d2,
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != ["q0", "q1", "S"] {
            return Err(McteError::InvalidInput(format!(
                "tabulated surface header must be q0,q1,S, found {}",
                header.join(",")
            )));
        }
        let mut rows: Vec<[f64; 3]> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(McteError::InvalidInput(format!(
                    "row {} needs 3 fields",
                    line + 1
                )));
            }
            let mut r = [0.0; 3];
            for (k, f) in rec.iter().enumerate() {
                r[k] = f.parse().map_err(|_| {
                    McteError::InvalidInput(format!("row {}: cannot parse {f:?}", line + 1))
                })?;
            }
            rows.push(r);
        }
        let ny = rows.iter().take_while(|r| r[0] == rows[0][0]).count();
        if ny == 0 || !rows.len().is_multiple_of(ny) {
            return Err(McteError::InvalidInput(
                "tabulated grid is not rectangular".into(),
            ));
        }
        let ys: Vec<f64> = rows[..ny].iter().map(|r| r[1]).collect();
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for block in rows.chunks(ny) {
            let x = block[0][0];
            if block.iter().any(|r| r[0] != x) || block.iter().zip(&ys).any(|(r, y)| r[1] != *y) {
                return Err(McteError::InvalidInput(
                    "tabulated grid must be row-major in q0 with a shared q1 axis".into(),
                ));
            }
            xs.push(x);
            values.push(block.iter().map(|r| r[2]).collect());
        }
        Self::new(xs, ys, values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| McteError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f)
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (
            [self.xs[0], self.xs[self.xs.len() - 1]],
            [self.ys[0], self.ys[self.ys.len() - 1]],
        )
    }
}

impl ScalarField for TabulatedSurface {
    fn dim(&self) -> usize {
        2
    }

    fn contains(&self, q: &[f64]) -> bool {
        let (bx, by) = self.bounds();
        q.len() == 2 && q[0] >= bx[0] && q[0] <= bx[1] && q[1] >= by[0] && q[1] <= by[1]
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        if !self.contains(q) {
            return Err(McteError::Domain {
                q: q.to_vec(),
                reason: "outside the tabulated grid".into(),
            });
        }
        let column: Vec<f64> = self
            .values
            .iter()
            .zip(&self.row_d2)
            .map(|(row, d2)| spline_eval(&self.ys, row, d2, q[1]))
            .collect();
        let d2 = natural_d2(&self.xs, &column);
        Ok(spline_eval(&self.xs, &column, &d2, q[0]))
    }
}
