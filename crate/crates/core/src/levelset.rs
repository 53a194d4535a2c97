//! Paths on entropy level sets and the coupling coefficients along them.
//!
//! A path is traced by stepping one *active* channel and slaving another
//! through `dq_s/dq_a = -beta_a / beta_s`, with an embedded Dormand-Prince
//! 5(4) step followed by a Newton projection of the slaved coordinate back
//! onto `S = S0`. When the slaved intensity becomes small relative to the
//! active one the roles are swapped, so near-vertical stretches of the level
//! set do not stall the integrator.
//!
//! `zeta_i = lambda_i exp(int omega_i)` is accumulated with composite
//! Gauss-Legendre quadrature between consecutive samples. Quadrature nodes are
//! placed on the level set itself (slaved coordinate re-solved at each node)
//! and `omega_i` is evaluated from fresh surface derivatives there.

use serde::Serialize;

use crate::error::{McteError, Result};
use crate::geometry::{metric_tensor, omega_components, OffDiagonalSign};
use crate::ode::{dopri5_step, step_factor};
use crate::quadrature::GaussLegendre;
use crate::surface::{EntropySurface, BETA_FLOOR, STRESS, VOLUME};

/// Tolerances and limits for tracing and quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step in the active parameter; defaults to 1% of the span.
    pub h_init: Option<f64>,
    /// Largest step; defaults to 5% of the span.
    pub h_max: Option<f64>,
    /// Absolute `|S - S0|` target after projection.
    pub drift_tol: f64,
    pub max_steps: usize,
    /// Swap active and slaved channels once `|beta_s| < swap_ratio |beta_a|`.
    pub swap_ratio: f64,
    /// Slaved channel for `n > 2`; ignored for two channels.
    pub slaved_channel: Option<usize>,
    pub quad_nodes: usize,
    pub quad_subdivisions: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            h_init: None,
            h_max: None,
            drift_tol: 1e-13,
            max_steps: 200_000,
            swap_ratio: 0.1,
            slaved_channel: None,
            quad_nodes: 7,
            quad_subdivisions: 1,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rtol, self.atol, self.drift_tol, self.swap_ratio];
        if positive.iter().any(|x| !(*x > 0.0) || !x.is_finite())
            || self.h_init.is_some_and(|h| !(h > 0.0))
            || self.h_max.is_some_and(|h| !(h > 0.0))
        {
            return Err(McteError::InvalidInput(
                "step tolerances must be positive and finite".into(),
            ));
        }
        if self.swap_ratio >= 0.5 {
            return Err(McteError::InvalidInput(
                "swap_ratio must be below 0.5".into(),
            ));
        }
        if self.quad_nodes == 0 || self.quad_subdivisions == 0 || self.max_steps == 0 {
            return Err(McteError::InvalidInput(
                "quadrature order, subdivisions and max_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    /// Value of the path parameter (the parameter channel's coordinate).
    pub param: f64,
    pub q: Vec<f64>,
    pub beta: Vec<f64>,
    /// `zeta_i`; NaN until filled by [`zeta_along_path`].
    pub zeta: Vec<f64>,
    pub s_drift: f64,
    /// Channel slaved by the constraint on the segment ending at this sample.
    pub slaved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    DomainEscape {
        at: f64,
    },
    /// Step size underflow, or the level set folds back before the target.
    Stiffness {
        at: f64,
        h: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSetPath {
    pub samples: Vec<PathSample>,
    pub s0: f64,
    /// `None` for user-specified curves whose parameter is chord length.
    pub param_channel: Option<usize>,
    /// Boundary normalization per channel; NaN where zeta is not filled.
    pub lambda: Vec<f64>,
    pub termination: Termination,
}

impl LevelSetPath {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_truncated(&self) -> bool {
        self.termination != Termination::Completed
    }

    /// Turn a truncated path into the corresponding error.
    pub fn into_complete(self) -> Result<Self> {
        match self.termination {
            Termination::Completed => Ok(self),
            Termination::DomainEscape { at } => Err(McteError::DomainEscape { at }),
            Termination::Stiffness { at, h } => Err(McteError::Stiffness { at, h }),
        }
    }

    pub fn max_s_drift(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.s_drift.abs())
            .fold(0.0, f64::max)
    }

    /// `zeta_i T_i` at every sample.
    pub fn products(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.zeta[i] / s.beta[i]).collect()
    }

    /// Per-channel `zeta_i T_i` averaged along the path (NaN where unfilled).
    pub fn c_values(&self) -> Vec<f64> {
        invariant_check(self).c_mean
    }

    pub fn end(&self) -> &PathSample {
        self.samples
            .last()
            .expect("a path always holds its start sample")
    }

    /// Largest relative deviation of `zeta_i / lambda_i` from `beta_i / beta_i(q0)`.
    pub fn beta_ratio_error(&self, i: usize) -> f64 {
        let b0 = self.samples[0].beta[i];
        let lam = self.lambda[i];
        self.samples
            .iter()
            .map(|s| {
                let expect = s.beta[i] / b0;
                ((s.zeta[i] / lam - expect) / expect).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest of `max(chi) / min(chi)` style ratio of `|T_i|` along the path.
    pub fn temperature_ratio(&self, i: usize) -> f64 {
        let ts: Vec<f64> = self
            .samples
            .iter()
            .map(|s| (1.0 / s.beta[i]).abs())
            .collect();
        let max = ts.iter().copied().fold(f64::MIN, f64::max);
        let min = ts.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }
}

struct Projector<'a> {
    surface: &'a EntropySurface,
    s0: f64,
    tol: f64,
}

impl Projector<'_> {
    /// Newton iteration on coordinate `s` at fixed others until `|S - S0| <= tol`.
    fn project(&self, q: &mut [f64], s: usize) -> Result<f64> {
        let mut r = self.surface.entropy(q)? - self.s0;
        for _ in 0..12 {
            if r.abs() <= self.tol * 0.25 {
                break;
            }
            let beta = self.surface.gradient_unchecked(q)?;
            if beta[s].abs() < BETA_FLOOR {
                return Err(McteError::DegenerateIntensity {
                    channel: s,
                    value: beta[s],
                });
            }
            let prev = q[s];
            q[s] -= r / beta[s];
            let r_new = match self.surface.entropy(q) {
                Ok(v) => v - self.s0,
                Err(e) => {
                    q[s] = prev;
                    return Err(e);
                }
            };
            if r_new.abs() >= r.abs() {
                if r_new.abs() > r.abs() {
                    q[s] = prev;
                } else {
                    r = r_new;
                }
                break;
            }
            r = r_new;
        }
        Ok(r)
    }
}

/// Move `q[slaved]` onto `S = s0` with the other coordinates fixed.
/// Returns the remaining `S - s0`.
pub fn snap_to_level_set(
    surface: &EntropySurface,
    q: &mut [f64],
    slaved: usize,
    s0: f64,
    drift_tol: f64,
) -> Result<f64> {
    Projector {
        surface,
        s0,
        tol: drift_tol.max(4.0 * f64::EPSILON * s0.abs()),
    }
    .project(q, slaved)
}

fn slope(surface: &EntropySurface, q: &[f64], active: usize, slaved: usize) -> Result<f64> {
    let beta = surface.gradient_unchecked(q)?;
    if beta[slaved].abs() < BETA_FLOOR {
        return Err(McteError::DegenerateIntensity {
            channel: slaved,
            value: beta[slaved],
        });
    }
    Ok(-beta[active] / beta[slaved])
}

/// Trace the level set `S = S(q0)` from `q0` until the parameter channel
/// reaches `target`.
///
/// Escaping the domain or a step-size underflow ends the path early; the
/// partial path is returned with its [`Termination`] set.
pub fn trace_level_set(
    surface: &EntropySurface,
    q0: &[f64],
    param_channel: usize,
    target: f64,
    ctrl: &StepControl,
) -> Result<LevelSetPath> {
    ctrl.validate()?;
    let n = surface.dim();
    if q0.len() != n {
        return Err(McteError::InvalidInput(format!(
            "start point has {} coordinates, surface has {n}",
            q0.len()
        )));
    }
    if param_channel >= n {
        return Err(McteError::Index(format!(
            "parameter channel {param_channel} >= {n}"
        )));
    }
    if !target.is_finite() {
        return Err(McteError::InvalidInput("target must be finite".into()));
    }
    let orig_slaved = match (n, ctrl.slaved_channel) {
        (2, _) => 1 - param_channel,
        (_, Some(s)) if s < n && s != param_channel => s,
        (_, Some(s)) => return Err(McteError::Index(format!("invalid slaved channel {s}"))),
        (_, None) => (0..n).find(|&k| k != param_channel).unwrap(),
    };
    let s0 = surface.entropy(q0)?;
    let beta0 = surface.gradient(q0)?;
    let projector = Projector {
        surface,
        s0,
        tol: ctrl.drift_tol.max(4.0 * f64::EPSILON * s0.abs()),
    };

    let span = target - q0[param_channel];
    let dir = span.signum();
    let span_abs = span.abs();
    let h_max = ctrl.h_max.unwrap_or(0.05 * span_abs).max(f64::MIN_POSITIVE);
    let h_min = 1e-13 * span_abs.max(q0[param_channel].abs()).max(1e-3);
    let mut h = ctrl.h_init.unwrap_or(0.01 * span_abs).min(h_max);

    let sample = |q: Vec<f64>, beta: Vec<f64>, drift: f64, slaved: usize| PathSample {
        param: q[param_channel],
        q,
        beta,
        zeta: vec![f64::NAN; n],
        s_drift: drift,
        slaved,
    };
    let mut samples = vec![sample(q0.to_vec(), beta0, 0.0, orig_slaved)];
    let mut termination = Termination::Completed;

    let mut q = q0.to_vec();
    let mut active = param_channel;
    let mut slaved = orig_slaved;
    // direction of travel in the active channel
    let mut act_dir = dir;
    let mut steps = 0usize;

    loop {
        let remaining = target - q[param_channel];
        if active == param_channel && remaining * dir <= 0.0 {
            break;
        }
        steps += 1;
        if steps > ctrl.max_steps {
            termination = Termination::Stiffness {
                at: q[param_channel],
                h,
            };
            break;
        }
        let h_try = if active == param_channel {
            h.min(remaining.abs()) * dir
        } else {
            h * act_dir
        };
        let landing = active == param_channel && h.min(remaining.abs()) == remaining.abs();

        let mut rhs = |t: f64, y: f64| -> Result<f64> {
            let mut p = q.clone();
            p[active] = t;
            p[slaved] = y;
            slope(surface, &p, active, slaved)
        };
        let trial = dopri5_step(&mut rhs, q[active], q[slaved], h_try, ctrl.rtol, ctrl.atol);
        let step = match trial {
            Ok(r) if r.y.is_finite() => r,
            Ok(_) | Err(McteError::Domain { .. }) | Err(McteError::NonFinite { .. }) => {
                h = h_try.abs() * 0.25;
                if h < h_min {
                    termination = Termination::DomainEscape {
                        at: q[param_channel],
                    };
                    break;
                }
                continue;
            }
            Err(McteError::DegenerateIntensity { .. }) if active == param_channel => {
                // the slaved intensity vanished mid-step: force a swap
                h = h_try.abs() * 0.25;
                if h < h_min {
                    termination = Termination::Stiffness {
                        at: q[param_channel],
                        h,
                    };
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        if step.err > 1.0 {
            h = h_try.abs() * step_factor(step.err);
            if h < h_min {
                termination = Termination::Stiffness {
                    at: q[param_channel],
                    h,
                };
                break;
            }
            continue;
        }

        let mut next = q.clone();
        next[active] = if landing { target } else { q[active] + h_try };
        next[slaved] = step.y;

        if active != param_channel && (next[param_channel] - target) * dir > 0.0 {
            // overshot the target while swapped: finish in the original parameter
            active = param_channel;
            slaved = orig_slaved;
            h = (target - q[param_channel]).abs();
            continue;
        }

        let drift = match projector.project(&mut next, slaved) {
            Ok(d) => d,
            Err(McteError::Domain { .. }) => {
                termination = Termination::DomainEscape {
                    at: q[param_channel],
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let beta = surface.gradient_unchecked(&next)?;
        q = next;
        samples.push(sample(q.clone(), beta.clone(), drift, slaved));
        h = (h_try.abs() * step_factor(step.err)).min(h_max);

        if active == param_channel {
            if landing {
                break;
            }
            if beta[slaved].abs() < ctrl.swap_ratio * beta[active].abs() {
                let dslaved = -beta[active] / beta[slaved] * dir;
                act_dir = dslaved.signum();
                h = (h * (beta[active] / beta[slaved]).abs()).min(h_max);
                std::mem::swap(&mut active, &mut slaved);
            }
        } else {
            // slaved is now the original parameter
            let dparam = -beta[active] / beta[slaved] * act_dir;
            if dparam * dir < 0.0 && beta[active].abs() > BETA_FLOOR {
                termination = Termination::Stiffness {
                    at: q[param_channel],
                    h,
                };
                break;
            }
            if beta[active].abs() > 2.0 * ctrl.swap_ratio * beta[slaved].abs() {
                h = (h * (beta[active] / beta[slaved]).abs()).min(h_max);
                std::mem::swap(&mut active, &mut slaved);
            }
        }
    }

    Ok(LevelSetPath {
        samples,
        s0,
        param_channel: Some(param_channel),
        lambda: vec![f64::NAN; n],
        termination,
    })
}

/// Level set through `q0` sampled at user-given points: every coordinate
/// except `slaved` is taken from `nodes`, the slaved one is solved for.
/// The path parameter is cumulative chord length in the free coordinates.
pub fn slave_curve(
    surface: &EntropySurface,
    q0: &[f64],
    slaved: usize,
    nodes: &[Vec<f64>],
    drift_tol: f64,
) -> Result<LevelSetPath> {
    let n = surface.dim();
    if slaved >= n || q0.len() != n || nodes.iter().any(|p| p.len() != n) {
        return Err(McteError::InvalidInput(
            "curve nodes must match the surface dimension".into(),
        ));
    }
    let s0 = surface.entropy(q0)?;
    let projector = Projector {
        surface,
        s0,
        tol: drift_tol.max(4.0 * f64::EPSILON * s0.abs()),
    };
    let beta0 = surface.gradient(q0)?;
    let mut samples = vec![PathSample {
        param: 0.0,
        q: q0.to_vec(),
        beta: beta0,
        zeta: vec![f64::NAN; n],
        s_drift: 0.0,
        slaved,
    }];
    let mut arc = 0.0;
    let mut termination = Termination::Completed;
    for node in nodes {
        let prev = &samples.last().unwrap().q;
        let mut q = node.clone();
        q[slaved] = prev[slaved];
        arc += (0..n)
            .filter(|&k| k != slaved)
            .map(|k| (q[k] - prev[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        let drift = match projector.project(&mut q, slaved) {
            Ok(d) => d,
            Err(McteError::Domain { .. }) => {
                termination = Termination::DomainEscape { at: arc };
                break;
            }
            Err(e) => return Err(e),
        };
        let beta = surface.gradient_unchecked(&q)?;
        samples.push(PathSample {
            param: arc,
            q,
            beta,
            zeta: vec![f64::NAN; n],
            s_drift: drift,
            slaved,
        });
    }
    Ok(LevelSetPath {
        samples,
        s0,
        param_channel: None,
        lambda: vec![f64::NAN; n],
        termination,
    })
}

/// Fill `zeta_i = lambda_i exp(int omega_i)` along the path.
pub fn zeta_along_path(
    surface: &EntropySurface,
    path: &LevelSetPath,
    i: usize,
    lambda_i: f64,
    ctrl: &StepControl,
) -> Result<LevelSetPath> {
    zeta_along_path_signed(surface, path, i, lambda_i, ctrl, OffDiagonalSign::Correct)
}

pub(crate) fn zeta_along_path_signed(
    surface: &EntropySurface,
    path: &LevelSetPath,
    i: usize,
    lambda_i: f64,
    ctrl: &StepControl,
    sign: OffDiagonalSign,
) -> Result<LevelSetPath> {
    ctrl.validate()?;
    if i >= path.dim() {
        return Err(McteError::Index(format!("channel {i} >= {}", path.dim())));
    }
    if !lambda_i.is_finite() || lambda_i == 0.0 {
        return Err(McteError::InvalidInput(
            "lambda must be finite and non-zero".into(),
        ));
    }
    let rule = GaussLegendre::new(ctrl.quad_nodes);
    let projector = Projector {
        surface,
        s0: path.s0,
        tol: ctrl.drift_tol.max(4.0 * f64::EPSILON * path.s0.abs()),
    };
    let mut out = path.clone();
    out.lambda[i] = lambda_i;
    out.samples[0].zeta[i] = lambda_i;
    let mut log_zeta = 0.0;
    for k in 1..out.samples.len() {
        let a = &path.samples[k - 1];
        let b = &path.samples[k];
        log_zeta += segment_integral(&projector, &rule, ctrl.quad_subdivisions, a, b, i, sign)?;
        out.samples[k].zeta[i] = lambda_i * log_zeta.exp();
    }
    Ok(out)
}

fn segment_integral(
    projector: &Projector<'_>,
    rule: &GaussLegendre,
    subdivisions: usize,
    a: &PathSample,
    b: &PathSample,
    i: usize,
    sign: OffDiagonalSign,
) -> Result<f64> {
    let surface = projector.surface;
    let s = b.slaved;
    let n = a.q.len();
    let delta: Vec<f64> = a.q.iter().zip(&b.q).map(|(x, y)| y - x).collect();
    let mut total = 0.0;
    let mut q = a.q.clone();
    let width = 1.0 / subdivisions as f64;
    for sub in 0..subdivisions {
        let t0 = sub as f64 * width;
        for (node, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = t0 + node * width;
            for k in 0..n {
                if k != s {
                    q[k] = a.q[k] + t * delta[k];
                }
            }
            // warm start from the chord, then snap onto the level set
            let chord = a.q[s] + t * delta[s];
            q[s] = chord;
            projector.project(&mut q, s)?;
            let beta = surface.gradient_unchecked(&q)?;
            let g = metric_tensor(surface, &q)?;
            let omega = omega_components(&g, &beta, i, sign)?;
            if beta[s].abs() < BETA_FLOOR {
                return Err(McteError::DegenerateIntensity {
                    channel: s,
                    value: beta[s],
                });
            }
            let dslaved = -(0..n)
                .filter(|&k| k != s)
                .map(|k| beta[k] * delta[k])
                .sum::<f64>()
                / beta[s];
            let integrand: f64 = (0..n)
                .map(|k| omega[k] * if k == s { dslaved } else { delta[k] })
                .sum();
            total += w * width * integrand;
        }
    }
    Ok(total)
}

/// Cross-channel normalization making `zeta_i T_i` identical at the start:
/// `lambda_i = lambda_0 T_0(q0) / T_i(q0)`.
pub fn calibrated_lambdas(path: &LevelSetPath, lambda0: f64) -> Vec<f64> {
    let b = &path.samples[0].beta;
    b.iter().map(|bi| lambda0 * bi / b[0]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub c_mean: Vec<f64>,
    pub max_rel_drift: Vec<f64>,
}

/// Mean and largest relative deviation of `zeta_i T_i` for each channel.
pub fn invariant_check(path: &LevelSetPath) -> InvariantReport {
    let n = path.dim();
    let mut c_mean = vec![f64::NAN; n];
    let mut max_rel_drift = vec![f64::NAN; n];
    for i in 0..n {
        if path.lambda[i].is_nan() {
            continue;
        }
        let zt = path.products(i);
        let mean = zt.iter().sum::<f64>() / zt.len() as f64;
        c_mean[i] = mean;
        max_rel_drift[i] = zt
            .iter()
            .map(|v| ((v - mean) / mean).abs())
            .fold(0.0, f64::max);
    }
    InvariantReport {
        c_mean,
        max_rel_drift,
    }
}

/// Closed polyline in coordinate space; the last vertex connects to the first.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub vertices: Vec<Vec<f64>>,
    pub samples_per_edge: usize,
}

impl LoopSpec {
    /// Counter-clockwise rectangle in the (q0, q1) plane.
    pub fn rectangle(q0: (f64, f64), q1: (f64, f64), samples_per_edge: usize) -> Self {
        Self {
            vertices: vec![
                vec![q0.0, q1.0],
                vec![q0.1, q1.0],
                vec![q0.1, q1.1],
                vec![q0.0, q1.1],
            ],
            samples_per_edge,
        }
    }

    pub fn validate(&self, surface: &EntropySurface) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(McteError::InvalidInput(
                "a loop needs at least three vertices".into(),
            ));
        }
        if self.samples_per_edge == 0 {
            return Err(McteError::InvalidInput(
                "samples_per_edge must be positive".into(),
            ));
        }
        for (k, v) in self.vertices.iter().enumerate() {
            if !surface.contains(v) {
                return Err(McteError::Domain {
                    q: v.clone(),
                    reason: format!("loop vertex {k} outside the surface domain"),
                });
            }
            let w = &self.vertices[(k + 1) % self.vertices.len()];
            let mid: Vec<f64> = v.iter().zip(w).map(|(a, b)| 0.5 * (a + b)).collect();
            if !surface.contains(&mid) {
                return Err(McteError::DomainEscape { at: k as f64 + 0.5 });
            }
        }
        Ok(())
    }
}

/// `oint omega_i` around the polyline, treating `omega_i` as a one-form
/// defined pointwise everywhere in the domain.
pub fn holonomy(surface: &EntropySurface, loop_spec: &LoopSpec, i: usize) -> Result<f64> {
    holonomy_with_rule(surface, loop_spec, i, &GaussLegendre::new(7))
}

pub fn holonomy_with_rule(
    surface: &EntropySurface,
    loop_spec: &LoopSpec,
    i: usize,
    rule: &GaussLegendre,
) -> Result<f64> {
    loop_spec.validate(surface)?;
    let m = loop_spec.vertices.len();
    let mut total = 0.0;
    for k in 0..m {
        let a = &loop_spec.vertices[k];
        let b = &loop_spec.vertices[(k + 1) % m];
        total += line_integral(surface, a, b, i, loop_spec.samples_per_edge, rule).map_err(
            |e| match e {
                McteError::Domain { .. } => McteError::DomainEscape { at: k as f64 },
                other => other,
            },
        )?;
    }
    Ok(total)
}

/// `int omega_i` along the straight segment `a -> b`.
pub fn line_integral(
    surface: &EntropySurface,
    a: &[f64],
    b: &[f64],
    i: usize,
    pieces: usize,
    rule: &GaussLegendre,
) -> Result<f64> {
    let delta: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let width = 1.0 / pieces as f64;
    let mut total = 0.0;
    let mut q = a.to_vec();
    for piece in 0..pieces {
        for (node, w) in rule.nodes.iter().zip(&rule.weights) {
            let t = (piece as f64 + node) * width;
            for k in 0..q.len() {
                q[k] = a[k] + t * delta[k];
            }
            let beta = surface.gradient_unchecked(&q)?;
            let g = metric_tensor(surface, &q)?;
            let omega = omega_components(&g, &beta, i, OffDiagonalSign::Correct)?;
            let dot: f64 = omega.iter().zip(&delta).map(|(o, d)| o * d).sum();
            total += w * width * dot;
        }
    }
    Ok(total)
}

/// Area integral of `d omega_i` over the rectangle `[q0.0, q0.1] x [q1.0, q1.1]`
/// (two-channel surfaces). The curl is taken by fourth-order central
/// differences of `omega_i`; this is the Stokes-side cross-check of
/// [`holonomy`] on [`LoopSpec::rectangle`].
pub fn stokes_holonomy(
    surface: &EntropySurface,
    q0: (f64, f64),
    q1: (f64, f64),
    i: usize,
    cells: usize,
) -> Result<f64> {
    if surface.dim() != 2 {
        return Err(McteError::InvalidInput(
            "Stokes check is two-channel only".into(),
        ));
    }
    let rule = GaussLegendre::new(8);
    let omega = |x: f64, y: f64| -> Result<Vec<f64>> {
        let q = [x, y];
        let beta = surface.gradient_unchecked(&q)?;
        let g = metric_tensor(surface, &q)?;
        omega_components(&g, &beta, i, OffDiagonalSign::Correct)
    };
    let hx = 1e-4 * (q0.1 - q0.0).abs().max(1e-3);
    let hy = 1e-4 * (q1.1 - q1.0).abs().max(1e-3);
    let d = |f: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> {
        Ok((f(-2.0 * h)? - 8.0 * f(-h)? + 8.0 * f(h)? - f(2.0 * h)?) / (12.0 * h))
    };
    let wx = (q0.1 - q0.0) / cells as f64;
    let wy = (q1.1 - q1.0) / cells as f64;
    let mut total = 0.0;
    for cx in 0..cells {
        for cy in 0..cells {
            for (nx, wxk) in rule.nodes.iter().zip(&rule.weights) {
                for (ny, wyk) in rule.nodes.iter().zip(&rule.weights) {
                    let x = q0.0 + (cx as f64 + nx) * wx;
                    let y = q1.0 + (cy as f64 + ny) * wy;
                    let dqy_dx = d(&|e| Ok(omega(x + e, y)?[1]), hx)?;
                    let dqx_dy = d(&|e| Ok(omega(x, y + e)?[0]), hy)?;
                    total += wxk * wyk * wx * wy * (dqy_dx - dqx_dy);
                }
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignFlipReport {
    pub drift_correct: f64,
    pub drift_flipped: f64,
    pub s_drift_max: f64,
    /// True when every off-diagonal metric entry on the path is zero.
    pub vacuous: bool,
    pub correct: LevelSetPath,
    pub flipped: LevelSetPath,
}

/// Run the volume-channel pipeline twice, once with the off-diagonal metric
/// sign flipped inside `omega` only, and compare the invariant drift.
pub fn sign_flip_diagnostic(
    surface: &EntropySurface,
    q0: &[f64],
    target_sigma: f64,
    ctrl: &StepControl,
) -> Result<SignFlipReport> {
    let path = trace_level_set(surface, q0, STRESS, target_sigma, ctrl)?.into_complete()?;
    let correct =
        zeta_along_path_signed(surface, &path, VOLUME, 1.0, ctrl, OffDiagonalSign::Correct)?;
    let flipped =
        zeta_along_path_signed(surface, &path, VOLUME, 1.0, ctrl, OffDiagonalSign::Flipped)?;
    let mut vacuous = true;
    for s in &path.samples {
        let g = metric_tensor(surface, &s.q)?;
        if g[(VOLUME, STRESS)] != 0.0 {
            vacuous = false;
            break;
        }
    }
    Ok(SignFlipReport {
        drift_correct: invariant_check(&correct).max_rel_drift[VOLUME],
        drift_flipped: invariant_check(&flipped).max_rel_drift[VOLUME],
        s_drift_max: path.max_s_drift(),
        vacuous,
        correct,
        flipped,
    })
}
