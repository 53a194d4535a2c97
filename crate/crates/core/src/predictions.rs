//! Granular-plasticity predictions evaluated from the entropy surface alone:
//! the dilatancy ratio, the metric-stability (Rowe energy) restriction and
//! the coupling-corrected Rowe stress ratio.

use rayon::prelude::*;
use serde::Serialize;

use crate::contour::{zero_contour, ScalarGrid};
use crate::error::{McteError, Result};
use crate::geometry::{classify_stability, metric_at, metric_tensor};
use crate::levelset::{snap_to_level_set, trace_level_set, zeta_along_path, StepControl};
use crate::surface::{EntropySurface, STRESS, VOLUME};

/// Constant in `|D_geom - D_path| <= K (g_Vsigma / g_VV)^2`. Twice the
/// largest ratio observed on the `c = 0.15` calibration grid of
/// [`DILATANCY_CALIBRATION_V`] x [`DILATANCY_CALIBRATION_SIGMA`] with the
/// default toy parameters; see [`calibrate_remainder_constant`].
pub const DILATANCY_REMAINDER_K: f64 = 67.031_973_745_293_9;

pub const DILATANCY_CALIBRATION_V: [f64; 4] = [0.79, 0.80, 0.85, 0.90];
pub const DILATANCY_CALIBRATION_SIGMA: [f64; 3] = [0.1, 0.2, 0.4];

/// Below this `|g_Vsigma / g_VV|` the leading-order dilatancy term is vacuous.
pub const VACUOUS_COUPLING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DilatancyReport {
    pub q: Vec<f64>,
    /// `(g_Vsigma / g_VV) (chi / A)`.
    pub d_geom: f64,
    /// `-(dV/V) / (dsigma/sigma)` along the level set through `q`.
    pub d_path: f64,
    /// `(g_Vsigma / g_VV)^2`.
    pub remainder_bound: f64,
    pub vacuous: bool,
}

impl DilatancyReport {
    /// `|D_geom - D_path| / remainder_bound`.
    pub fn remainder_ratio(&self) -> f64 {
        (self.d_geom - self.d_path).abs() / self.remainder_bound
    }
}

fn require_two(surface: &EntropySurface) -> Result<()> {
    if surface.dim() != 2 {
        return Err(McteError::InvalidInput(
            "granular predictions need a two-channel (V, sigma) surface".into(),
        ));
    }
    Ok(())
}

pub fn dilatancy_at(surface: &EntropySurface, q: &[f64]) -> Result<DilatancyReport> {
    require_two(surface)?;
    let mp = metric_at(surface, q)?;
    let gvv = mp.g[(VOLUME, VOLUME)];
    if gvv == 0.0 {
        return Err(McteError::InvalidInput("g_VV vanishes".into()));
    }
    let r = mp.g[(VOLUME, STRESS)] / gvv;
    let d_geom = r * mp.compactivity() / mp.angoricity();

    let (v, sigma) = (q[VOLUME], q[STRESS]);
    let d_path = if sigma == 0.0 {
        0.0
    } else {
        let s0 = surface.entropy(q)?;
        let mut h = 1e-3 * sigma.abs().max(1.0);
        if sigma > 0.0 {
            h = h.min(sigma / 2.5);
        }
        let slope0 = -mp.beta[STRESS] / mp.beta[VOLUME];
        let v_at = |k: f64| -> Result<f64> {
            let mut p = vec![v + slope0 * k * h, sigma + k * h];
            snap_to_level_set(surface, &mut p, VOLUME, s0, 1e-14)?;
            Ok(p[VOLUME])
        };
        let dv = (v_at(-2.0)? - 8.0 * v_at(-1.0)? + 8.0 * v_at(1.0)? - v_at(2.0)?) / (12.0 * h);
        -(sigma / v) * dv
    };
    Ok(DilatancyReport {
        q: q.to_vec(),
        d_geom,
        d_path,
        remainder_bound: r * r,
        vacuous: r.abs() < VACUOUS_COUPLING,
    })
}

/// Twice the largest remainder ratio over the given points.
pub fn calibrate_remainder_constant(surface: &EntropySurface, points: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for q in points {
        let rep = dilatancy_at(surface, q)?;
        if !rep.vacuous {
            worst = worst.max(rep.remainder_ratio());
        }
    }
    Ok(2.0 * worst)
}

/// Normalization point for `zeta_V`: `zeta_V(q0) = lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZetaReference {
    pub q0: Vec<f64>,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoweReport {
    pub q: Vec<f64>,
    pub zeta_v: f64,
    pub k_mu: f64,
    pub r: f64,
    /// `zeta_V K_mu R`.
    pub stress_ratio: f64,
    /// `K_mu R`.
    pub classical_ratio: f64,
    pub det_g: f64,
    pub is_stable: bool,
    pub is_critical: bool,
}

/// `zeta_V` at `q` integrated along the level set from the reference point.
pub fn zeta_v_from_reference(
    surface: &EntropySurface,
    q: &[f64],
    reference: &ZetaReference,
    ctrl: &StepControl,
) -> Result<f64> {
    require_two(surface)?;
    let s_ref = surface.entropy(&reference.q0)?;
    let s_q = surface.entropy(q)?;
    if (s_q - s_ref).abs() > 1e-9 * s_ref.abs().max(1.0) {
        return Err(McteError::InvalidInput(format!(
            "q is not on the reference level set (S(q) - S(q0) = {:e})",
            s_q - s_ref
        )));
    }
    let path = trace_level_set(surface, &reference.q0, STRESS, q[STRESS], ctrl)?.into_complete()?;
    let end_v = path.end().q[VOLUME];
    if (end_v - q[VOLUME]).abs() > 1e-8 * q[VOLUME].abs().max(1.0) {
        return Err(McteError::InvalidInput(format!(
            "level set from the reference reaches V = {end_v} at sigma = {}, not V = {}",
            q[STRESS], q[VOLUME]
        )));
    }
    let path = zeta_along_path(surface, &path, VOLUME, reference.lambda, ctrl)?;
    Ok(path.end().zeta[VOLUME])
}

pub fn rowe_at(
    surface: &EntropySurface,
    q: &[f64],
    k_mu: f64,
    r: f64,
    reference: &ZetaReference,
    ctrl: &StepControl,
) -> Result<RoweReport> {
    if !k_mu.is_finite() || !r.is_finite() {
        return Err(McteError::InvalidInput("K_mu and R must be finite".into()));
    }
    let zeta_v = zeta_v_from_reference(surface, q, reference, ctrl)?;
    let cls = classify_stability(&metric_tensor(surface, q)?);
    let classical_ratio = k_mu * r;
    Ok(RoweReport {
        q: q.to_vec(),
        zeta_v,
        k_mu,
        r,
        stress_ratio: zeta_v * classical_ratio,
        classical_ratio,
        det_g: cls.det,
        is_stable: cls.stable,
        is_critical: cls.critical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub v_range: (f64, f64),
    pub sigma_range: (f64, f64),
    pub nv: usize,
    pub nsigma: usize,
}

impl GridSpec {
    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nv < 2 || self.nsigma < 2 {
            return Err(McteError::InvalidInput(
                "stability grid needs at least 2x2 nodes".into(),
            ));
        }
        let r = [
            self.v_range.0,
            self.v_range.1,
            self.sigma_range.0,
            self.sigma_range.1,
        ];
        if r.iter().any(|x| !x.is_finite())
            || self.v_range.1 <= self.v_range.0
            || self.sigma_range.1 <= self.sigma_range.0
        {
            return Err(McteError::InvalidInput(
                "stability grid ranges must be increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityCell {
    pub v: f64,
    pub sigma: f64,
    /// NaN for nodes outside the surface domain.
    pub det_g: f64,
    pub valid: bool,
    pub stable: bool,
    pub critical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub v: f64,
    pub sigma: f64,
    pub det_g: f64,
    pub zero_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityMap {
    pub spec: GridSpec,
    /// Row-major with V as the outer index.
    pub cells: Vec<StabilityCell>,
    /// `det g = 0` polylines, vertices refined by bisection along grid edges.
    pub contour: Vec<Vec<CriticalPoint>>,
    /// Grid squares crossed by the critical contour.
    pub critical_cells: usize,
}

impl StabilityMap {
    pub fn contour_points(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.contour.iter().flatten()
    }
}

/// Evaluate `det g` on a grid, classify each node and extract the critical
/// contour. Nodes outside the domain are marked invalid.
pub fn stability_map(surface: &EntropySurface, spec: &GridSpec) -> Result<StabilityMap> {
    require_two(surface)?;
    spec.validate()?;
    let vs = GridSpec::axis(spec.v_range, spec.nv);
    let ss = GridSpec::axis(spec.sigma_range, spec.nsigma);
    let nodes: Vec<(f64, f64)> = vs
        .iter()
        .flat_map(|v| ss.iter().map(move |s| (*v, *s)))
        .collect();
    let cells: Vec<StabilityCell> = nodes
        .par_iter()
        .map(|&(v, sigma)| match metric_tensor(surface, &[v, sigma]) {
            Ok(g) => {
                let cls = classify_stability(&g);
                StabilityCell {
                    v,
                    sigma,
                    det_g: cls.det,
                    valid: true,
                    stable: cls.stable,
                    critical: cls.critical,
                }
            }
            Err(_) => StabilityCell {
                v,
                sigma,
                det_g: f64::NAN,
                valid: false,
                stable: false,
                critical: false,
            },
        })
        .collect();

    let grid = ScalarGrid {
        xs: vs,
        ys: ss,
        values: cells.iter().map(|c| c.det_g).collect(),
    };
    let contour = zero_contour(&grid, |a, b, fa, fb| refine_critical(surface, a, b, fa, fb));
    let contour =
        contour_points(surface, &contour.polylines).map(|c| (c, contour.crossed_cells))?;
    Ok(StabilityMap {
        spec: *spec,
        cells,
        contour: contour.0,
        critical_cells: contour.1,
    })
}

fn contour_points(
    surface: &EntropySurface,
    lines: &[Vec<[f64; 2]>],
) -> Result<Vec<Vec<CriticalPoint>>> {
    lines
        .iter()
        .map(|line| {
            line.iter()
                .map(|p| {
                    let cls = classify_stability(&metric_tensor(surface, p)?);
                    Ok(CriticalPoint {
                        v: p[0],
                        sigma: p[1],
                        det_g: cls.det,
                        zero_band: cls.zero_band,
                    })
                })
                .collect()
        })
        .collect()
}

/// Bisection on `det g` along a grid edge until it falls inside the zero band.
fn refine_critical(
    surface: &EntropySurface,
    a: [f64; 2],
    b: [f64; 2],
    fa: f64,
    _fb: f64,
) -> [f64; 2] {
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let lo_sign = fa > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = at(mid);
        let Ok(g) = metric_tensor(surface, &p) else {
            break;
        };
        let cls = classify_stability(&g);
        if cls.det.abs() <= 0.01 * cls.zero_band || mid <= lo || mid >= hi {
            return p;
        }
        if (cls.det > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Critical-state stress ratio `M = zeta_V K_mu R` at each contour point,
/// with `zeta_V` normalized to 1 where the point's own level set crosses
/// `sigma_ref`. NaN where that level set cannot be followed to `sigma_ref`.
pub fn critical_stress_ratios(
    surface: &EntropySurface,
    map: &StabilityMap,
    sigma_ref: f64,
    k_mu: f64,
    r: f64,
    ctrl: &StepControl,
) -> Vec<f64> {
    let pts: Vec<&CriticalPoint> = map.contour_points().collect();
    pts.par_iter()
        .map(|p| {
            let q = [p.v, p.sigma];
            let path = match trace_level_set(surface, &q, STRESS, sigma_ref, ctrl)
                .and_then(|p| p.into_complete())
                .and_then(|path| zeta_along_path(surface, &path, VOLUME, 1.0, ctrl))
            {
                Ok(path) => path,
                Err(_) => return f64::NAN,
            };
            // zeta relative to the reference end: zeta(q) / zeta(ref)
            k_mu * r / path.end().zeta[VOLUME]
        })
        .collect()
}
