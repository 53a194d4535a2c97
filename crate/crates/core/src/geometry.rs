//! Ruppeiner metric, the coupling one-form and stability diagnostics.
//!
//! The sign convention `g = -Hessian(S)` is applied in exactly one place,
//! [`metric_tensor`]. Everything downstream consumes `g`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{McteError, Result};
use crate::surface::{check_intensities, EntropySurface, BETA_FLOOR, STRESS, VOLUME};

/// Relative width of the band around `det g = 0` that counts as critical.
pub const CRITICAL_BAND: f64 = 1e-10;

/// Ruppeiner metric, intensities and temperatures at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricPoint {
    pub q: Vec<f64>,
    pub g: DMatrix<f64>,
    pub beta: Vec<f64>,
    pub temperature: Vec<f64>,
}

impl MetricPoint {
    /// Assemble from raw parts. Requires a symmetric `g` and all intensities
    /// above the floor.
    pub fn from_parts(q: Vec<f64>, g: DMatrix<f64>, beta: Vec<f64>) -> Result<Self> {
        let n = beta.len();
        if g.nrows() != n || g.ncols() != n || q.len() != n {
            return Err(McteError::InvalidInput(format!(
                "metric is {}x{} but there are {n} intensities",
                g.nrows(),
                g.ncols()
            )));
        }
        if g != g.transpose() {
            return Err(McteError::InvalidInput("metric must be symmetric".into()));
        }
        check_intensities(&beta)?;
        let temperature = beta.iter().map(|b| 1.0 / b).collect();
        Ok(Self {
            q,
            g,
            beta,
            temperature,
        })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Compactivity `chi = T_V` of the granular system.
    pub fn compactivity(&self) -> f64 {
        self.temperature[VOLUME]
    }

    /// Angoricity `A = T_sigma` (scalar normal projection).
    pub fn angoricity(&self) -> f64 {
        self.temperature[STRESS]
    }
}

/// `g_ij = -d^2 S / dq^i dq^j`.
pub fn metric_tensor(surface: &EntropySurface, q: &[f64]) -> Result<DMatrix<f64>> {
    Ok(-surface.hessian(q)?)
}

pub fn metric_at(surface: &EntropySurface, q: &[f64]) -> Result<MetricPoint> {
    let beta = surface.gradient(q)?;
    let g = metric_tensor(surface, q)?;
    MetricPoint::from_parts(q.to_vec(), g, beta)
}

/// Coefficients of `omega_i` on each `dq^j`; the `j = i` slot is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OneFormValue {
    pub channel: usize,
    pub components: Vec<f64>,
}

/// Sign applied to the off-diagonal metric entries when forming `omega`.
/// `Flipped` exists only for the sign-error diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffDiagonalSign {
    #[default]
    Correct,
    Flipped,
}

/// `(g_ii beta_j - s g_ij beta_i) / beta_i^2` for `j != i`, `s = +-1`.
pub(crate) fn omega_components(
    g: &DMatrix<f64>,
    beta: &[f64],
    i: usize,
    sign: OffDiagonalSign,
) -> Result<Vec<f64>> {
    let n = beta.len();
    if i >= n {
        return Err(McteError::Index(format!(
            "channel {i} out of range for n = {n}"
        )));
    }
    let bi = beta[i];
    if bi.abs() < BETA_FLOOR {
        return Err(McteError::DegenerateIntensity {
            channel: i,
            value: bi,
        });
    }
    let s = match sign {
        OffDiagonalSign::Correct => 1.0,
        OffDiagonalSign::Flipped => -1.0,
    };
    let gii = g[(i, i)];
    Ok((0..n)
        .map(|j| {
            if j == i {
                0.0
            } else {
                (gii * beta[j] - s * g[(i, j)] * bi) / (bi * bi)
            }
        })
        .collect())
}

pub fn omega_at(mp: &MetricPoint, i: usize) -> Result<OneFormValue> {
    Ok(OneFormValue {
        channel: i,
        components: omega_components(&mp.g, &mp.beta, i, OffDiagonalSign::Correct)?,
    })
}

/// `d beta_i / dq^j` restricted to `dS = 0`.
pub fn levelset_flow_rhs(mp: &MetricPoint, i: usize, j: usize) -> Result<f64> {
    let n = mp.dim();
    if i >= n || j >= n {
        return Err(McteError::Index(format!(
            "channels ({i}, {j}) out of range for n = {n}"
        )));
    }
    if i == j {
        return Err(McteError::Index(format!(
            "level-set flow needs distinct channels, got i = j = {i}"
        )));
    }
    let bi = mp.beta[i];
    if bi.abs() < BETA_FLOOR {
        return Err(McteError::DegenerateIntensity {
            channel: i,
            value: bi,
        });
    }
    Ok((mp.g[(i, i)] * mp.beta[j] - mp.g[(i, j)] * bi) / bi)
}

/// Scalar two-channel form of the volume coupling ODE,
/// `chi^2 (g_VV / A - g_Vsigma / chi)`, i.e. `d log zeta_V / d sigma`.
pub fn scalar_zeta_coefficient(mp: &MetricPoint) -> Result<f64> {
    require_two_channels(mp)?;
    let chi = mp.compactivity();
    let ang = mp.angoricity();
    Ok(chi * chi * (mp.g[(VOLUME, VOLUME)] / ang - mp.g[(VOLUME, STRESS)] / chi))
}

fn require_two_channels(mp: &MetricPoint) -> Result<()> {
    if mp.dim() != 2 {
        return Err(McteError::InvalidInput(format!(
            "two-channel (V, sigma) quantity requested on an n = {} system",
            mp.dim()
        )));
    }
    Ok(())
}

/// Normal projections entering the scalar stress-channel reduction. The
/// projection is fixed upstream, so `n_hat` is the trivial unit vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalProjection {
    pub n_hat: Vec<f64>,
    pub g_vsigma: f64,
    pub angoricity: f64,
}

pub fn normal_projection(mp: &MetricPoint) -> Result<NormalProjection> {
    require_two_channels(mp)?;
    Ok(NormalProjection {
        n_hat: vec![1.0],
        g_vsigma: mp.g[(VOLUME, STRESS)],
        angoricity: mp.angoricity(),
    })
}

/// `det g`.
pub fn stability_det(mp: &MetricPoint) -> f64 {
    mp.g.determinant()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityClass {
    pub det: f64,
    pub zero_band: f64,
    pub stable: bool,
    pub critical: bool,
    /// Order of the first leading principal minor below `-zero_band`.
    pub first_failing_minor: Option<usize>,
}

/// Stability of `g` from its leading principal minors. Each minor is
/// compared against a zero band `1e-10 * ||g||_F^k` scaled to its order.
pub fn classify_stability(g: &DMatrix<f64>) -> StabilityClass {
    let n = g.nrows();
    let frob = g.norm();
    let band = |k: usize| CRITICAL_BAND * frob.powi(k as i32);
    let mut first_failing_minor = None;
    for k in 1..=n {
        let minor = g.view((0, 0), (k, k)).determinant();
        if minor < -band(k) {
            first_failing_minor = Some(k);
            break;
        }
    }
    let det = g.determinant();
    let zero_band = band(n);
    StabilityClass {
        det,
        zero_band,
        stable: first_failing_minor.is_none(),
        critical: det.abs() <= zero_band,
        first_failing_minor,
    }
}

/// Fractional MCTE correction scale `|g_Vsigma / g_VV| * |chi / A|`.
pub fn correction_estimate(mp: &MetricPoint) -> Result<f64> {
    require_two_channels(mp)?;
    let gvv = mp.g[(VOLUME, VOLUME)];
    if gvv == 0.0 {
        return Err(McteError::InvalidInput("g_VV vanishes".into()));
    }
    let ang = mp.angoricity();
    if !ang.is_finite() || ang == 0.0 {
        return Err(McteError::DegenerateIntensity {
            channel: STRESS,
            value: mp.beta[STRESS],
        });
    }
    Ok((mp.g[(VOLUME, STRESS)] / gvv).abs() * (mp.compactivity() / ang).abs())
}

/// Bisection on `det g` along the segment `a -> b`; the endpoints must
/// bracket a sign change. Returns the located point.
pub fn bisect_critical(
    surface: &EntropySurface,
    a: &[f64],
    b: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let det_at = |t: f64| -> Result<f64> {
        let q: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
        Ok(metric_tensor(surface, &q)?.determinant())
    };
    let len = a
        .iter()
        .zip(b)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut f_lo = det_at(lo)?;
    let f_hi = det_at(hi)?;
    if f_lo == 0.0 {
        return Ok(a.to_vec());
    }
    if f_hi == 0.0 {
        return Ok(b.to_vec());
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(McteError::InvalidInput(
            "segment endpoints do not bracket det g = 0".into(),
        ));
    }
    while (hi - lo) * len > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = det_at(mid)?;
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok(a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::ToyGranularParams;
    use approx::assert_relative_eq;

    fn toy(c: f64, v_j: f64) -> EntropySurface {
        EntropySurface::toy(ToyGranularParams {
            a: 1.0,
            b: 1.0,
            c,
            v_j,
            sigma_max: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn decoupled_metric() {
        let mp = metric_at(&toy(0.0, 0.0), &[0.5, 0.5]).unwrap();
        assert_eq!(mp.g.as_slice(), &[4.0, 0.0, 0.0, 4.0]);
        assert_eq!(mp.beta, vec![2.0, -2.0]);
        assert_eq!(mp.temperature, vec![0.5, -0.5]);
    }

    #[test]
    fn coupled_off_diagonal_is_negative() {
        let mp = metric_at(&toy(0.3, 0.7), &[0.78, 0.2]).unwrap();
        assert_relative_eq!(mp.g[(0, 1)], -46.875, max_relative = 1e-14);
        assert_eq!(mp.g[(0, 1)], mp.g[(1, 0)]);
    }

    #[test]
    fn quadratic_metric_is_constant() {
        let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
        for q in [[0.1, 0.2], [-3.0, 5.0]] {
            let mp = metric_at(&s, &q).unwrap();
            assert_eq!(mp.g.as_slice(), &[2.0, 0.0, 0.0, 3.0]);
        }
    }

    #[test]
    fn omega_decoupled_is_beta_sigma_over_a() {
        let s = toy(0.0, 0.75);
        for v in [0.76, 0.8, 0.9, 1.3] {
            let mp = metric_at(&s, &[v, 0.3]).unwrap();
            let w = omega_at(&mp, VOLUME).unwrap();
            assert_eq!(w.components[VOLUME], 0.0);
            assert_relative_eq!(w.components[STRESS], -1.0 / 0.7, max_relative = 1e-13);
        }
    }

    #[test]
    fn omega_vanishes_without_cross_terms() {
        let g = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
        let mp = MetricPoint::from_parts(vec![0.0, 0.0], g, vec![2.0, 0.0])
            .err()
            .unwrap();
        assert!(matches!(
            mp,
            McteError::DegenerateIntensity { channel: 1, .. }
        ));
        let g = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
        let w = omega_components(&g, &[2.0, 0.0], 0, OffDiagonalSign::Correct).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn flow_rhs_quadratic_example() {
        let s = EntropySurface::quadratic(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let mp = metric_at(&s, &[0.3, 0.4]).unwrap();
        assert_relative_eq!(
            levelset_flow_rhs(&mp, 0, 1).unwrap(),
            4.0 / 3.0,
            max_relative = 1e-15
        );
        assert!(matches!(
            levelset_flow_rhs(&mp, 1, 1),
            Err(McteError::Index(_))
        ));
    }

    #[test]
    fn flow_rhs_decoupled_toy() {
        let mp = metric_at(&toy(0.0, 0.75), &[0.82, 0.4]).unwrap();
        let expect = mp.g[(0, 0)] * mp.beta[1] / mp.beta[0];
        assert_relative_eq!(
            levelset_flow_rhs(&mp, 0, 1).unwrap(),
            expect,
            max_relative = 1e-15
        );
    }

    #[test]
    fn determinant_cases() {
        let mp = metric_at(&toy(0.0, 0.75), &[0.82, 0.4]).unwrap();
        assert!(stability_det(&mp) > 0.0);

        // Closed form: g_VV = 1/0.08^2 + 0.12/0.08^3, g_ss = 1/0.8^2, g_Vs = -46.875
        let mp = metric_at(&toy(0.3, 0.7), &[0.78, 0.2]).unwrap();
        let expect = (156.25 + 234.375) * 1.5625 - 46.875 * 46.875;
        assert_relative_eq!(stability_det(&mp), expect, max_relative = 1e-12);
        assert!(stability_det(&mp) < 0.0);

        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let cls = classify_stability(&g);
        assert_eq!(cls.det, 0.0);
        assert!(cls.critical && cls.stable);
    }

    #[test]
    fn sylvester_reports_first_failing_minor() {
        let g = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 3.0, 1.0]);
        let cls = classify_stability(&g);
        assert!(!cls.stable);
        assert_eq!(cls.first_failing_minor, Some(3));
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(classify_stability(&g).first_failing_minor, Some(1));
    }

    #[test]
    fn correction_estimate_cases() {
        let mp = metric_at(&toy(0.0, 0.75), &[0.82, 0.4]).unwrap();
        assert_eq!(correction_estimate(&mp).unwrap(), 0.0);

        let s = toy(0.3, 0.7);
        let mp = metric_at(&s, &[0.78, 0.2]).unwrap();
        // |g_Vs/g_VV| * |beta_s/beta_V| in closed form
        let gvv: f64 = 156.25 + 234.375;
        let (bv, bs): (f64, f64) = (12.5 + 9.375, -1.25 - 3.75);
        assert_relative_eq!(
            correction_estimate(&mp).unwrap(),
            46.875 / gvv * (bs / bv).abs(),
            max_relative = 1e-13
        );

        // closed form 0.3 x^2 (1.25 x + 0.3) / ((x + 0.12)(x + 0.06)) with
        // x = V - V_J: the estimate shrinks toward jamming on this surface
        let mut last = f64::INFINITY;
        for v in [0.90, 0.85, 0.80, 0.79] {
            let e = correction_estimate(&metric_at(&toy(0.3, 0.75), &[v, 0.2]).unwrap()).unwrap();
            let x: f64 = v - 0.75;
            let expect = 0.3 * x * x * (1.25 * x + 0.3) / ((x + 0.12) * (x + 0.06));
            assert_relative_eq!(e, expect, max_relative = 1e-12);
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn bisection_locates_det_zero() {
        let s = toy(0.6, 0.75);
        let q = bisect_critical(&s, &[0.8, 0.3], &[1.4, 0.3], 1e-12).unwrap();
        let x: f64 = q[0] - 0.75;
        // b x (a x + 2 c sigma) = c^2 (sigma_max - sigma)^2 with a = b = 1
        let root = 0.5 * (-0.36 + (0.36f64 * 0.36 + 4.0 * 0.36 * 0.49).sqrt());
        assert!((x - root).abs() < 1e-10);
        let again = bisect_critical(&s, &[0.8, 0.3], &[1.4, 0.3], 1e-12).unwrap();
        assert_eq!(q, again);
    }
}
