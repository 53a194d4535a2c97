//! Entropy surfaces `S(q)` together with their first and second derivatives.
//!
//! Two closed-form kinds carry hand-coded analytic derivatives (the granular
//! toy surface and a diagonal quadratic control surface). Anything else is
//! wrapped as an external [`ScalarField`] and differentiated numerically
//! with fourth-order central stencils.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{McteError, Result};

/// Intensities with magnitude below this make `T_i = 1/beta_i` meaningless.
pub const BETA_FLOOR: f64 = 1e-12;

/// Volume channel of the granular two-channel system.
pub const VOLUME: usize = 0;
/// Stress channel (scalar normal projection) of the granular system.
pub const STRESS: usize = 1;

/// Point in the space of extensive variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Coordinates(Vec<f64>);

impl Coordinates {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(McteError::InvalidInput(format!(
                "at least two channels are required, got {}",
                q.len()
            )));
        }
        if let Some(bad) = q.iter().find(|x| !x.is_finite()) {
            return Err(McteError::InvalidInput(format!(
                "coordinate {bad} is not finite"
            )));
        }
        Ok(Self(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for Coordinates {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Coordinates {
    type Error = McteError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Coordinates::new(v)
    }
}

impl From<Coordinates> for Vec<f64> {
    fn from(c: Coordinates) -> Self {
        c.0
    }
}

/// Parameters of `S = a ln(V - V_J) + b ln(sigma_max - sigma) - c sigma / (V - V_J)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyGranularParams {
    pub a: f64,
    pub b: f64,
    /// Coupling strength; `c = 0` decouples the two channels.
    pub c: f64,
    pub v_j: f64,
    pub sigma_max: f64,
}

impl Default for ToyGranularParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            c: 0.3,
            v_j: 0.75,
            sigma_max: 1.0,
        }
    }
}

impl ToyGranularParams {
    pub fn with_coupling(self, c: f64) -> Self {
        Self { c, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.c, self.v_j, self.sigma_max];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(McteError::InvalidInput(
                "toy surface parameters must be finite".into(),
            ));
        }
        if self.a <= 0.0 || self.b <= 0.0 {
            return Err(McteError::InvalidInput(format!(
                "toy surface needs a > 0 and b > 0 (a = {}, b = {})",
                self.a, self.b
            )));
        }
        if self.c < 0.0 {
            return Err(McteError::InvalidInput(format!(
                "coupling c must be non-negative, got {}",
                self.c
            )));
        }
        if self.sigma_max <= 0.0 {
            return Err(McteError::InvalidInput(format!(
                "sigma_max must be positive, got {}",
                self.sigma_max
            )));
        }
        Ok(())
    }

    fn domain_violation(&self, q: &[f64]) -> Option<&'static str> {
        let (v, s) = (q[VOLUME], q[STRESS]);
        if !(v > self.v_j) {
            Some("V must exceed V_J")
        } else if !(s < self.sigma_max) {
            Some("sigma must stay below sigma_max")
        } else if !(s >= 0.0) {
            Some("sigma must be non-negative")
        } else {
            None
        }
    }

    fn entropy(&self, q: &[f64]) -> f64 {
        let x = q[VOLUME] - self.v_j;
        let s = q[STRESS];
        self.a * x.ln() + self.b * (self.sigma_max - s).ln() - self.c * s / x
    }

    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let x = q[VOLUME] - self.v_j;
        let s = q[STRESS];
        vec![
            self.a / x + self.c * s / (x * x),
            -self.b / (self.sigma_max - s) - self.c / x,
        ]
    }

    fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let x = q[VOLUME] - self.v_j;
        let s = q[STRESS];
        let hvv = -self.a / (x * x) - 2.0 * self.c * s / (x * x * x);
        let hvs = self.c / (x * x);
        let hss = -self.b / ((self.sigma_max - s) * (self.sigma_max - s));
        DMatrix::from_row_slice(2, 2, &[hvv, hvs, hvs, hss])
    }
}

/// A user-supplied entropy function. Always differentiated numerically.
pub trait ScalarField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn contains(&self, q: &[f64]) -> bool;
    fn value(&self, q: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    ToyGranular(ToyGranularParams),
    /// `S = -1/2 sum_i k_i (q_i - center_i)^2`, a constant-metric control surface.
    QuadraticDiagonal {
        curvature: Vec<f64>,
        center: Vec<f64>,
    },
    External(Arc<dyn ScalarField>),
}

/// Finite-difference steps. `Auto` picks `max(1e-5, 1e-7 |q_i|)` for the
/// gradient and `max(1e-3, 1e-5 |q_i|)` for the outer Hessian stencil, and
/// halves each near a domain boundary until `q +- 16 h` stays inside.
#[derive(Debug, Clone, PartialEq)]
pub enum FdStep {
    Auto,
    Fixed {
        gradient: Vec<f64>,
        hessian: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    CentralFd(FdStep),
}

/// Relative tolerance for the two nested cross-derivative orderings.
pub const FD_SYMMETRY_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct EntropySurface {
    kind: SurfaceKind,
    mode: DerivativeMode,
}

impl EntropySurface {
    pub fn toy(params: ToyGranularParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            kind: SurfaceKind::ToyGranular(params),
            mode: DerivativeMode::Analytic,
        })
    }

    pub fn quadratic(curvature: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        if curvature.len() < 2 || curvature.len() != center.len() {
            return Err(McteError::InvalidInput(
                "quadratic surface needs matching curvature and center of length >= 2".into(),
            ));
        }
        if curvature.iter().any(|k| !(*k > 0.0) || !k.is_finite())
            || center.iter().any(|c| !c.is_finite())
        {
            return Err(McteError::InvalidInput(
                "quadratic curvatures must be positive and finite".into(),
            ));
        }
        Ok(Self {
            kind: SurfaceKind::QuadraticDiagonal { curvature, center },
            mode: DerivativeMode::Analytic,
        })
    }

    pub fn external(field: Arc<dyn ScalarField>) -> Result<Self> {
        if field.dim() < 2 {
            return Err(McteError::InvalidInput(
                "external surface must have at least two channels".into(),
            ));
        }
        Ok(Self {
            kind: SurfaceKind::External(field),
            mode: DerivativeMode::CentralFd(FdStep::Auto),
        })
    }

    pub fn with_derivatives(mut self, mode: DerivativeMode) -> Result<Self> {
        if matches!(self.kind, SurfaceKind::External(_)) && mode == DerivativeMode::Analytic {
            return Err(McteError::InvalidInput(
                "external surfaces have no analytic derivatives".into(),
            ));
        }
        if let DerivativeMode::CentralFd(FdStep::Fixed { gradient, hessian }) = &mode {
            let n = self.dim();
            if gradient.len() != n || hessian.len() != n {
                return Err(McteError::InvalidInput(format!(
                    "finite-difference steps need {n} entries"
                )));
            }
            if gradient
                .iter()
                .chain(hessian)
                .any(|h| !(*h > 0.0) || !h.is_finite())
            {
                return Err(McteError::InvalidInput(
                    "finite-difference steps must be positive".into(),
                ));
            }
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    pub fn derivative_mode(&self) -> &DerivativeMode {
        &self.mode
    }

    pub fn toy_params(&self) -> Option<&ToyGranularParams> {
        match &self.kind {
            SurfaceKind::ToyGranular(p) => Some(p),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SurfaceKind::ToyGranular(_) => 2,
            SurfaceKind::QuadraticDiagonal { curvature, .. } => curvature.len(),
            SurfaceKind::External(f) => f.dim(),
        }
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        self.domain_check(q).is_ok()
    }

    fn domain_check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(McteError::InvalidInput(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                q.len()
            )));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(McteError::Domain {
                q: q.to_vec(),
                reason: "non-finite coordinate".into(),
            });
        }
        let reason = match &self.kind {
            SurfaceKind::ToyGranular(p) => p.domain_violation(q),
            SurfaceKind::QuadraticDiagonal { .. } => None,
            SurfaceKind::External(f) => (!f.contains(q)).then_some("outside tabulated domain"),
        };
        match reason {
            Some(r) => Err(McteError::Domain {
                q: q.to_vec(),
                reason: r.into(),
            }),
            None => Ok(()),
        }
    }

    /// `S(q)`.
    pub fn entropy(&self, q: &[f64]) -> Result<f64> {
        self.domain_check(q)?;
        let s = match &self.kind {
            SurfaceKind::ToyGranular(p) => p.entropy(q),
            SurfaceKind::QuadraticDiagonal { curvature, center } => {
                -0.5 * curvature
                    .iter()
                    .zip(center)
                    .zip(q)
                    .map(|((k, c), x)| k * (x - c) * (x - c))
                    .sum::<f64>()
            }
            SurfaceKind::External(f) => f.value(q)?,
        };
        if !s.is_finite() {
            return Err(McteError::NonFinite {
                what: "S",
                q: q.to_vec(),
            });
        }
        Ok(s)
    }

    /// Intensities `beta_i = dS/dq^i`, rejecting any below [`BETA_FLOOR`].
    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let beta = self.gradient_unchecked(q)?;
        check_intensities(&beta)?;
        Ok(beta)
    }

    /// Gradient without the intensity floor; stationary points are allowed.
    pub fn gradient_unchecked(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.domain_check(q)?;
        let beta = match (&self.kind, &self.mode) {
            (SurfaceKind::ToyGranular(p), DerivativeMode::Analytic) => p.gradient(q),
            (SurfaceKind::QuadraticDiagonal { curvature, center }, DerivativeMode::Analytic) => {
                curvature
                    .iter()
                    .zip(center)
                    .zip(q)
                    .map(|((k, c), x)| -k * (x - c))
                    .collect()
            }
            (_, DerivativeMode::CentralFd(step)) => self.fd_gradient(q, step)?,
            (SurfaceKind::External(_), DerivativeMode::Analytic) => unreachable!(),
        };
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(McteError::NonFinite {
                what: "gradient",
                q: q.to_vec(),
            });
        }
        Ok(beta)
    }

    /// Symmetric Hessian `d^2 S / dq^i dq^j`.
    pub fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.domain_check(q)?;
        let h = match (&self.kind, &self.mode) {
            (SurfaceKind::ToyGranular(p), DerivativeMode::Analytic) => p.hessian(q),
            (SurfaceKind::QuadraticDiagonal { curvature, .. }, DerivativeMode::Analytic) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    curvature.len(),
                    curvature.iter().map(|k| -k),
                ))
            }
            (_, DerivativeMode::CentralFd(step)) => self.fd_hessian(q, step)?,
            (SurfaceKind::External(_), DerivativeMode::Analytic) => unreachable!(),
        };
        if h.iter().any(|x| !x.is_finite()) {
            return Err(McteError::NonFinite {
                what: "hessian",
                q: q.to_vec(),
            });
        }
        Ok(h)
    }

    fn steps(&self, q: &[f64], step: &FdStep) -> Result<(Vec<f64>, Vec<f64>)> {
        match step {
            FdStep::Fixed { gradient, hessian } => {
                let outer: Vec<f64> = gradient
                    .iter()
                    .zip(hessian)
                    .map(|(g, h)| g.max(*h))
                    .collect();
                if !self.stencil_fits(q, &outer) {
                    return Err(McteError::Domain {
                        q: q.to_vec(),
                        reason: "finite-difference stencil q +- 2h leaves the domain".into(),
                    });
                }
                Ok((gradient.clone(), hessian.clone()))
            }
            FdStep::Auto => {
                // each step is halved until its stencil fits with a margin of
                // 8x, keeping the step well below the distance to a boundary
                let mut hg: Vec<f64> = q.iter().map(|x| (1e-7 * x.abs()).max(1e-5)).collect();
                let mut hh: Vec<f64> = q.iter().map(|x| (1e-5 * x.abs()).max(1e-3)).collect();
                let margin = |h: &[f64]| -> Vec<f64> { h.iter().map(|x| 8.0 * x).collect() };
                for _ in 0..60 {
                    let g_ok = self.stencil_fits(q, &margin(&hg));
                    let h_ok = self.stencil_fits(q, &margin(&hh));
                    if g_ok && h_ok {
                        return Ok((hg, hh));
                    }
                    if !g_ok {
                        hg.iter_mut().for_each(|h| *h *= 0.5);
                    }
                    if !h_ok {
                        hh.iter_mut().for_each(|h| *h *= 0.5);
                    }
                }
                Err(McteError::Domain {
                    q: q.to_vec(),
                    reason: "too close to the domain boundary for a finite-difference stencil"
                        .into(),
                })
            }
        }
    }

    fn stencil_fits(&self, q: &[f64], h: &[f64]) -> bool {
        let mut p = q.to_vec();
        for i in 0..q.len() {
            for sign in [-2.0, 2.0] {
                p[i] = q[i] + sign * h[i];
                if self.domain_check(&p).is_err() {
                    return false;
                }
            }
            p[i] = q[i];
        }
        true
    }

    fn raw_entropy(&self, q: &[f64]) -> Result<f64> {
        match &self.kind {
            SurfaceKind::ToyGranular(p) => {
                self.domain_check(q)?;
                Ok(p.entropy(q))
            }
            _ => self.entropy(q),
        }
    }

    /// Fourth-order central difference of S along channel `i` with step `h`.
    fn fd_first(&self, q: &mut [f64], i: usize, h: f64) -> Result<f64> {
        let base = q[i];
        let mut acc = 0.0;
        for (k, w) in FIRST_STENCIL {
            q[i] = base + k * h;
            acc += w * self.raw_entropy(q)?;
        }
        q[i] = base;
        Ok(acc / (12.0 * h))
    }

    fn fd_gradient(&self, q: &[f64], step: &FdStep) -> Result<Vec<f64>> {
        let (hg, _) = self.steps(q, step)?;
        let mut p = q.to_vec();
        (0..q.len())
            .map(|i| self.fd_first(&mut p, i, hg[i]))
            .collect()
    }

    fn fd_hessian(&self, q: &[f64], step: &FdStep) -> Result<DMatrix<f64>> {
        let (hg, hh) = self.steps(q, step)?;
        let n = q.len();
        let mut p = q.to_vec();
        let mut h = DMatrix::zeros(n, n);
        let s0 = self.raw_entropy(q)?;
        for i in 0..n {
            let mut acc = -30.0 * s0;
            for (k, w) in SECOND_STENCIL {
                p[i] = q[i] + k * hh[i];
                acc += w * self.raw_entropy(&p)?;
            }
            p[i] = q[i];
            h[(i, i)] = acc / (12.0 * hh[i] * hh[i]);
        }
        let scale = (0..n).map(|i| h[(i, i)].abs()).fold(1.0_f64, f64::max);
        for i in 0..n {
            for j in (i + 1)..n {
                // outer stencil in j over inner first derivative in i, then swapped
                let hij = self.fd_nested(&mut p, i, hg[i], j, hh[j])?;
                let hji = self.fd_nested(&mut p, j, hg[j], i, hh[i])?;
                if (hij - hji).abs() > FD_SYMMETRY_TOL * scale.max(hij.abs()) {
                    return Err(McteError::SymmetryViolation { i, j, hij, hji });
                }
                let avg = 0.5 * (hij + hji);
                h[(i, j)] = avg;
                h[(j, i)] = avg;
            }
        }
        Ok(h)
    }

    fn fd_nested(
        &self,
        p: &mut [f64],
        inner: usize,
        hi: f64,
        outer: usize,
        ho: f64,
    ) -> Result<f64> {
        let base = p[outer];
        let mut acc = 0.0;
        for (k, w) in FIRST_STENCIL {
            p[outer] = base + k * ho;
            acc += w * self.fd_first(p, inner, hi)?;
        }
        p[outer] = base;
        Ok(acc / (12.0 * ho))
    }
}

const FIRST_STENCIL: [(f64, f64); 4] = [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)];
const SECOND_STENCIL: [(f64, f64); 4] = [(-2.0, -1.0), (-1.0, 16.0), (1.0, 16.0), (2.0, -1.0)];

pub(crate) fn check_intensities(beta: &[f64]) -> Result<()> {
    for (channel, &value) in beta.iter().enumerate() {
        if value.abs() < BETA_FLOOR {
            return Err(McteError::DegenerateIntensity { channel, value });
        }
    }
    Ok(())
}
