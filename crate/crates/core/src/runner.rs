//! Declarative scenario runner: strict JSON config, artifact writing and the
//! `summary.json` record.
//!
//! Artifacts are first written with a `.partial` suffix and renamed once the
//! scenario has finished. When a computation fails the `.partial` files stay
//! on disk together with `summary.json.partial` describing the failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::McteError;
use crate::fluctuation::{
    sample_metric, sample_metric_chains, sample_metric_with_sink, SamplerConfig,
};
use crate::levelset::{
    calibrated_lambdas, holonomy, invariant_check, sign_flip_diagnostic, stokes_holonomy,
    trace_level_set, zeta_along_path, LevelSetPath, LoopSpec, StepControl,
};
use crate::output::{
    fmt_f64, write_contour_csv, write_path_csv, write_stability_csv, write_table, Cell,
};
use crate::predictions::{
    critical_stress_ratios, dilatancy_at, rowe_at, stability_map, GridSpec, ZetaReference,
    DILATANCY_REMAINDER_K,
};
use crate::surface::{DerivativeMode, EntropySurface, FdStep, ToyGranularParams, STRESS, VOLUME};
use crate::tabulated::TabulatedSurface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Invariant,
    Sweep,
    Holonomy,
    StabilityMap,
    Dilatancy,
    Rowe,
    FluctuationCheck,
    SignError,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Invariant,
        Scenario::Sweep,
        Scenario::Holonomy,
        Scenario::StabilityMap,
        Scenario::Dilatancy,
        Scenario::Rowe,
        Scenario::FluctuationCheck,
        Scenario::SignError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Invariant => "invariant",
            Scenario::Sweep => "sweep",
            Scenario::Holonomy => "holonomy",
            Scenario::StabilityMap => "stability-map",
            Scenario::Dilatancy => "dilatancy",
            Scenario::Rowe => "rowe",
            Scenario::FluctuationCheck => "fluctuation-check",
            Scenario::SignError => "sign-error",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DerivativeSpec {
    #[default]
    Analytic,
    CentralFd {
        #[serde(default)]
        gradient_step: Option<Vec<f64>>,
        #[serde(default)]
        hessian_step: Option<Vec<f64>>,
    },
}

fn d_a() -> f64 {
    ToyGranularParams::default().a
}
fn d_b() -> f64 {
    ToyGranularParams::default().b
}
fn d_c() -> f64 {
    ToyGranularParams::default().c
}
fn d_vj() -> f64 {
    ToyGranularParams::default().v_j
}
fn d_smax() -> f64 {
    ToyGranularParams::default().sigma_max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Toy {
        #[serde(default = "d_a")]
        a: f64,
        #[serde(default = "d_b")]
        b: f64,
        #[serde(default = "d_c")]
        c: f64,
        #[serde(default = "d_vj")]
        v_j: f64,
        #[serde(default = "d_smax")]
        sigma_max: f64,
        #[serde(default)]
        derivatives: DerivativeSpec,
    },
    Quadratic {
        curvature: Vec<f64>,
        center: Vec<f64>,
        #[serde(default)]
        derivatives: DerivativeSpec,
    },
    /// CSV grid `q0,q1,S`; always differentiated numerically.
    Tabulated { path: PathBuf },
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        let p = ToyGranularParams::default();
        SurfaceSpec::Toy {
            a: p.a,
            b: p.b,
            c: p.c,
            v_j: p.v_j,
            sigma_max: p.sigma_max,
            derivatives: DerivativeSpec::Analytic,
        }
    }
}

impl SurfaceSpec {
    pub fn toy_params(&self) -> Option<ToyGranularParams> {
        match *self {
            SurfaceSpec::Toy {
                a,
                b,
                c,
                v_j,
                sigma_max,
                ..
            } => Some(ToyGranularParams {
                a,
                b,
                c,
                v_j,
                sigma_max,
            }),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<EntropySurface, McteError> {
        let (surface, deriv) = match self {
            SurfaceSpec::Toy { derivatives, .. } => (
                EntropySurface::toy(self.toy_params().unwrap())?,
                derivatives,
            ),
            SurfaceSpec::Quadratic {
                curvature,
                center,
                derivatives,
            } => (
                EntropySurface::quadratic(curvature.clone(), center.clone())?,
                derivatives,
            ),
            SurfaceSpec::Tabulated { path } => {
                let t = TabulatedSurface::from_csv_path(path)?;
                return EntropySurface::external(Arc::new(t));
            }
        };
        let mode = match deriv {
            DerivativeSpec::Analytic => DerivativeMode::Analytic,
            DerivativeSpec::CentralFd {
                gradient_step: None,
                hessian_step: None,
            } => DerivativeMode::CentralFd(FdStep::Auto),
            DerivativeSpec::CentralFd {
                gradient_step,
                hessian_step,
            } => {
                let n = surface.dim();
                let g = gradient_step.clone().unwrap_or_else(|| vec![1e-5; n]);
                let h = hessian_step.clone().unwrap_or_else(|| vec![1e-3; n]);
                DerivativeMode::CentralFd(FdStep::Fixed {
                    gradient: g,
                    hessian: h,
                })
            }
        };
        surface.with_derivatives(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantParams {
    pub q0: Vec<f64>,
    pub param_channel: usize,
    pub target: f64,
    /// `lambda` of channel 0.
    pub lambda: f64,
    /// Normalize the other channels so `zeta_i T_i` agrees at the start.
    pub calibrate: bool,
}

impl Default for InvariantParams {
    fn default() -> Self {
        Self {
            q0: vec![0.78, 0.1],
            param_channel: STRESS,
            target: 0.6,
            lambda: 1.0,
            calibrate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub c_values: Vec<f64>,
    pub v0_values: Vec<f64>,
    pub sigma_start: f64,
    pub sigma_end: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            c_values: vec![0.0, 0.15, 0.3, 0.6],
            v0_values: vec![0.90, 0.85, 0.80, 0.79],
            sigma_start: 0.1,
            sigma_end: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolonomyParams {
    pub v_range: (f64, f64),
    pub sigma_range: (f64, f64),
    /// Explicit polyline; replaces the rectangle when given.
    pub vertices: Option<Vec<Vec<f64>>>,
    pub samples_per_edge: usize,
    pub channel: usize,
    pub stokes_cells: usize,
}

impl Default for HolonomyParams {
    fn default() -> Self {
        Self {
            v_range: (0.78, 0.82),
            sigma_range: (0.1, 0.3),
            vertices: None,
            samples_per_edge: 8,
            channel: VOLUME,
            stokes_cells: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityParams {
    pub grid: GridSpec,
    /// Level-set crossing where `zeta_V = 1` for the critical stress ratio.
    pub sigma_ref: Option<f64>,
    pub k_mu: f64,
    pub r: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                v_range: (0.76, 1.6),
                sigma_range: (0.0, 0.95),
                nv: 43,
                nsigma: 39,
            },
            sigma_ref: Some(0.3),
            k_mu: 3.0,
            r: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilatancyParams {
    pub v_values: Vec<f64>,
    pub sigma_values: Vec<f64>,
    /// Remainder constant; the frozen calibration value when absent.
    pub k: Option<f64>,
}

impl Default for DilatancyParams {
    fn default() -> Self {
        Self {
            v_values: vec![0.79, 0.80, 0.85, 0.90],
            sigma_values: vec![0.1, 0.2, 0.4],
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoweParams {
    pub v0_values: Vec<f64>,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub k_mu: f64,
    pub r: f64,
}

impl Default for RoweParams {
    fn default() -> Self {
        Self {
            v0_values: vec![0.90, 0.85, 0.80, 0.79],
            sigma_start: 0.1,
            sigma_end: 0.6,
            k_mu: 3.0,
            r: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluctuationParams {
    pub q_center: Vec<f64>,
    #[serde(rename = "box")]
    pub half_width: Vec<f64>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub proposal_scale: Vec<f64>,
    pub batches: usize,
    pub chains: usize,
    /// Write every retained sample to `samples.csv` (single chain only).
    pub dump_samples: bool,
}

impl Default for FluctuationParams {
    fn default() -> Self {
        Self {
            q_center: vec![0.78, 0.2],
            half_width: vec![0.005, 0.005],
            n_samples: 1_000_000,
            burn_in: 20_000,
            proposal_scale: vec![0.002, 0.002],
            batches: 50,
            chains: 1,
            dump_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignErrorParams {
    pub q0: Vec<f64>,
    pub target: f64,
}

impl Default for SignErrorParams {
    fn default() -> Self {
        Self {
            q0: vec![0.78, 0.1],
            target: 0.6,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("mcte-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub surface: SurfaceSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub step: StepControl,
    #[serde(default)]
    pub invariant: InvariantParams,
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default)]
    pub holonomy: HolonomyParams,
    #[serde(default)]
    pub stability: StabilityParams,
    #[serde(default)]
    pub dilatancy: DilatancyParams,
    #[serde(default)]
    pub rowe: RoweParams,
    #[serde(default)]
    pub fluctuation: FluctuationParams,
    #[serde(default)]
    pub sign_error: SignErrorParams,
}

impl ScenarioConfig {
    /// Parse with unknown keys rejected.
    pub fn from_value(v: Value) -> Result<Self, RunError> {
        serde_json::from_value(v).map_err(|e| RunError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form (defaults filled in).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("computation failed: {message}")]
    Computation {
        message: String,
        partial: Vec<PathBuf>,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Computation { .. } => 3,
        }
    }
}

/// Apply `key.path=value` to a JSON object. The value is read as JSON when
/// it parses, as a bare string otherwise. Missing intermediate objects are
/// created; strict parsing later rejects anything misspelled.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), RunError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| RunError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(RunError::Config(format!(
            "override key {key:?} is malformed"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    RunError::Config(format!(
                        "override key {key:?}: {part:?} is not an array index"
                    ))
                })?;
                let len = items.len();
                node = items.get_mut(idx).ok_or_else(|| {
                    RunError::Config(format!(
                        "override key {key:?}: index {idx} out of range ({len})"
                    ))
                })?;
                if k + 1 == parts.len() {
                    *node = value;
                    return Ok(());
                }
                continue;
            }
            _ => {
                return Err(RunError::Config(format!(
                    "override key {key:?}: {part:?} is inside a non-object value"
                )))
            }
        };
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last key part")
}

/// Command-line level settings layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub set: Vec<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<ScenarioConfig, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    resolve_config(&mut v, ov)
}

pub fn resolve_config(v: &mut Value, ov: &Overrides) -> Result<ScenarioConfig, RunError> {
    if !v.is_object() {
        return Err(RunError::Config("config must be a JSON object".into()));
    }
    for s in &ov.set {
        apply_override(v, s)?;
    }
    let m = v.as_object_mut().unwrap();
    if let Some(s) = ov.scenario {
        if let Some(file) = m.get("scenario").and_then(Value::as_str) {
            if file != s.name() {
                return Err(RunError::Config(format!(
                    "config is for scenario {file:?} but {:?} was requested",
                    s.name()
                )));
            }
        }
        m.insert("scenario".into(), Value::String(s.name().into()));
    }
    if let Some(out) = &ov.output_dir {
        m.insert(
            "output_dir".into(),
            Value::String(out.display().to_string()),
        );
    }
    if let Some(seed) = ov.seed {
        m.insert("seed".into(), json!(seed));
    }
    ScenarioConfig::from_value(v.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub metrics: Value,
}

struct Artifacts {
    dir: PathBuf,
    names: Vec<String>,
}

impl Artifacts {
    fn partial_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.partial"))
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<(), McteError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), McteError>,
    {
        let mut w = BufWriter::new(File::create(self.partial_path(name))?);
        self.names.push(name.to_string());
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<(), McteError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, v).map_err(|e| McteError::Io(e.to_string()))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn finalize(&self) -> Result<(), McteError> {
        for n in &self.names {
            fs::rename(self.partial_path(n), self.dir.join(n))?;
        }
        Ok(())
    }
}

struct Prepared {
    surface: EntropySurface,
}

fn config_err(e: McteError) -> RunError {
    RunError::Config(e.to_string())
}

fn prepare(cfg: &ScenarioConfig) -> Result<Prepared, RunError> {
    let surface = cfg.surface.build().map_err(config_err)?;
    cfg.step.validate().map_err(config_err)?;
    let n = surface.dim();
    let need_toy = |what: &str| -> Result<(), RunError> {
        if cfg.surface.toy_params().is_none() {
            return Err(RunError::Config(format!(
                "{what} needs surface.kind = \"toy\""
            )));
        }
        Ok(())
    };
    let need_two = |what: &str| -> Result<(), RunError> {
        if n != 2 {
            return Err(RunError::Config(format!(
                "{what} needs a two-channel surface"
            )));
        }
        Ok(())
    };
    let point = |name: &str, q: &[f64]| -> Result<(), RunError> {
        if q.len() != n || !surface.contains(q) {
            return Err(RunError::Config(format!(
                "{name} = {q:?} is not a point of the surface domain"
            )));
        }
        Ok(())
    };
    let sigma_pair = |a: f64, b: f64| -> Result<(), RunError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(RunError::Config("sigma range must be finite".into()));
        }
        Ok(())
    };
    match cfg.scenario {
        Scenario::Invariant => {
            let p = &cfg.invariant;
            point("invariant.q0", &p.q0)?;
            if p.param_channel >= n {
                return Err(RunError::Config(format!(
                    "invariant.param_channel {} >= {n}",
                    p.param_channel
                )));
            }
            if !p.target.is_finite() || !p.lambda.is_finite() || p.lambda == 0.0 {
                return Err(RunError::Config(
                    "invariant.target and invariant.lambda must be finite, lambda non-zero".into(),
                ));
            }
        }
        Scenario::Sweep => {
            need_toy("sweep")?;
            let p = &cfg.sweep;
            sigma_pair(p.sigma_start, p.sigma_end)?;
            if p.c_values.is_empty() || p.v0_values.is_empty() {
                return Err(RunError::Config(
                    "sweep.c_values and sweep.v0_values must be non-empty".into(),
                ));
            }
            if p.c_values.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                return Err(RunError::Config(
                    "sweep.c_values must be finite and non-negative".into(),
                ));
            }
            for v in &p.v0_values {
                point("sweep.v0_values", &[*v, p.sigma_start])?;
            }
        }
        Scenario::Holonomy => {
            let p = &cfg.holonomy;
            if p.channel >= n {
                return Err(RunError::Config(format!(
                    "holonomy.channel {} >= {n}",
                    p.channel
                )));
            }
            if p.vertices.is_none() {
                need_two("a rectangular holonomy loop")?;
            }
            if p.stokes_cells == 0 {
                return Err(RunError::Config(
                    "holonomy.stokes_cells must be positive".into(),
                ));
            }
            holonomy_loop(p).validate(&surface).map_err(config_err)?;
        }
        Scenario::StabilityMap => {
            need_two("stability-map")?;
            cfg.stability.grid.validate().map_err(config_err)?;
        }
        Scenario::Dilatancy => {
            need_two("dilatancy")?;
            let p = &cfg.dilatancy;
            if p.v_values.is_empty() || p.sigma_values.is_empty() {
                return Err(RunError::Config("dilatancy grid must be non-empty".into()));
            }
            for v in &p.v_values {
                for s in &p.sigma_values {
                    point("dilatancy grid point", &[*v, *s])?;
                }
            }
        }
        Scenario::Rowe => {
            need_two("rowe")?;
            let p = &cfg.rowe;
            sigma_pair(p.sigma_start, p.sigma_end)?;
            if !p.k_mu.is_finite() || !p.r.is_finite() {
                return Err(RunError::Config(
                    "rowe.k_mu and rowe.r must be finite".into(),
                ));
            }
            for v in &p.v0_values {
                point("rowe.v0_values", &[*v, p.sigma_start])?;
            }
        }
        Scenario::FluctuationCheck => {
            sampler_config(cfg).validate(&surface).map_err(config_err)?;
            if cfg.fluctuation.chains == 0 {
                return Err(RunError::Config(
                    "fluctuation.chains must be positive".into(),
                ));
            }
            if cfg.fluctuation.dump_samples && cfg.fluctuation.chains != 1 {
                return Err(RunError::Config(
                    "fluctuation.dump_samples needs a single chain".into(),
                ));
            }
        }
        Scenario::SignError => {
            need_two("sign-error")?;
            point("sign_error.q0", &cfg.sign_error.q0)?;
        }
    }
    Ok(Prepared { surface })
}

fn holonomy_loop(p: &HolonomyParams) -> LoopSpec {
    match &p.vertices {
        Some(v) => LoopSpec {
            vertices: v.clone(),
            samples_per_edge: p.samples_per_edge,
        },
        None => LoopSpec::rectangle(p.v_range, p.sigma_range, p.samples_per_edge),
    }
}

fn sampler_config(cfg: &ScenarioConfig) -> SamplerConfig {
    let p = &cfg.fluctuation;
    SamplerConfig {
        q_center: p.q_center.clone(),
        half_width: p.half_width.clone(),
        n_samples: p.n_samples,
        burn_in: p.burn_in,
        proposal_scale: p.proposal_scale.clone(),
        seed: cfg.seed,
        batches: p.batches,
    }
}

/// Execute the configured scenario. `jobs` sizes the worker pool used by
/// `sweep` (all logical cores when `None`).
pub fn run(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| RunError::Computation {
        message: format!("cannot create {}: {e}", cfg.output_dir.display()),
        partial: vec![],
    })?;
    let mut art = Artifacts {
        dir: cfg.output_dir.clone(),
        names: vec![],
    };
    let outcome = execute(cfg, &prepared.surface, jobs, &mut art).and_then(|m| {
        art.finalize()?;
        Ok(m)
    });
    let mut summary = RunSummary {
        scenario: cfg.scenario.name().to_string(),
        status: "ok".into(),
        error: None,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        wall_time_s: 0.0,
        artifacts: art.names.clone(),
        metrics: Value::Null,
    };
    match outcome {
        Ok(metrics) => {
            summary.metrics = metrics;
            summary.wall_time_s = start.elapsed().as_secs_f64();
            write_summary(&cfg.output_dir.join("summary.json"), &summary).map_err(|e| {
                RunError::Computation {
                    message: e.to_string(),
                    partial: vec![],
                }
            })?;
            Ok(summary)
        }
        Err(e) => {
            summary.status = "error".into();
            summary.error = Some(e.to_string());
            summary.wall_time_s = start.elapsed().as_secs_f64();
            let mut partial: Vec<PathBuf> = art
                .names
                .iter()
                .map(|n| art.partial_path(n))
                .filter(|p| p.exists())
                .collect();
            let sp = cfg.output_dir.join("summary.json.partial");
            if write_summary(&sp, &summary).is_ok() {
                partial.push(sp);
            }
            Err(RunError::Computation {
                message: e.to_string(),
                partial,
            })
        }
    }
}

fn write_summary(path: &Path, s: &RunSummary) -> Result<(), McteError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, s).map_err(|e| McteError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn execute(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    jobs: Option<usize>,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    match cfg.scenario {
        Scenario::Invariant => run_invariant(cfg, surface, art),
        Scenario::Sweep => run_sweep(cfg, jobs, art),
        Scenario::Holonomy => run_holonomy(cfg, surface, art),
        Scenario::StabilityMap => run_stability(cfg, surface, art),
        Scenario::Dilatancy => run_dilatancy(cfg, surface, art),
        Scenario::Rowe => run_rowe(cfg, surface, art),
        Scenario::FluctuationCheck => run_fluctuation(cfg, surface, art),
        Scenario::SignError => run_sign_error(cfg, surface, art),
    }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

/// JSON number, or the string form for non-finite values.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(fmt_f64(x)), Value::Number)
}

fn termination_error(path: &LevelSetPath) -> Option<McteError> {
    path.clone().into_complete().err()
}

fn run_invariant(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.invariant;
    let path = trace_level_set(surface, &p.q0, p.param_channel, p.target, &cfg.step)?;
    let n = path.dim();
    let lambdas = if p.calibrate {
        calibrated_lambdas(&path, p.lambda)
    } else {
        vec![p.lambda; n]
    };
    let mut filled = path.clone();
    for (i, lam) in lambdas.iter().enumerate() {
        filled = zeta_along_path(surface, &filled, i, *lam, &cfg.step)?;
    }
    art.write("path.csv", |w| write_path_csv(w, &filled))?;
    if let Some(e) = termination_error(&filled) {
        return Err(e);
    }
    let inv = invariant_check(&filled);
    let beta_ratio: Vec<f64> = (0..n).map(|i| filled.beta_ratio_error(i)).collect();
    Ok(json!({
        "samples": filled.samples.len(),
        "lambda": nums(&lambdas),
        "c_mean": nums(&inv.c_mean),
        "max_rel_drift": nums(&inv.max_rel_drift),
        "s_drift_max": num(filled.max_s_drift()),
        "beta_ratio_error": nums(&beta_ratio),
        "chi_ratio": num(filled.temperature_ratio(VOLUME)),
        "zeta_end": nums(&filled.end().zeta),
        "q_end": nums(&filled.end().q),
    }))
}

/// `zeta_V` at the end of the level set from `(v0, sigma_start)` to `sigma_end`.
pub fn zeta_v_end(
    params: ToyGranularParams,
    v0: f64,
    sigma_start: f64,
    sigma_end: f64,
    ctrl: &StepControl,
) -> Result<(f64, Vec<f64>), McteError> {
    let surface = EntropySurface::toy(params)?;
    let path =
        trace_level_set(&surface, &[v0, sigma_start], STRESS, sigma_end, ctrl)?.into_complete()?;
    let path = zeta_along_path(&surface, &path, VOLUME, 1.0, ctrl)?;
    let end = path.end();
    Ok((end.zeta[VOLUME], end.q.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub c: f64,
    pub v0: f64,
    pub zeta1_end: f64,
    pub abs_zeta1_minus_1: f64,
    pub cross_coupling_contrib: f64,
}

/// The sweep table; rows follow `c_values` (outer) and `v0_values` (inner).
pub fn sweep_table(
    base: ToyGranularParams,
    p: &SweepParams,
    ctrl: &StepControl,
    jobs: Option<usize>,
) -> Result<Vec<SweepRow>, McteError> {
    use rayon::prelude::*;
    let mut cs = p.c_values.clone();
    if !cs.contains(&0.0) {
        cs.push(0.0);
    }
    let cells: Vec<(f64, f64)> = cs
        .iter()
        .flat_map(|c| p.v0_values.iter().map(move |v| (*c, *v)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| McteError::InvalidInput(format!("worker pool: {e}")))?;
    let results: Vec<f64> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(c, v)| {
                zeta_v_end(base.with_coupling(c), v, p.sigma_start, p.sigma_end, ctrl).map(|r| r.0)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let lookup = |c: f64, v: f64| {
        cells
            .iter()
            .position(|&(cc, vv)| cc == c && vv == v)
            .map(|k| results[k])
            .unwrap()
    };
    Ok(p.c_values
        .iter()
        .flat_map(|&c| p.v0_values.iter().map(move |&v| (c, v)))
        .map(|(c, v)| {
            let z = lookup(c, v);
            SweepRow {
                c,
                v0: v,
                zeta1_end: z,
                abs_zeta1_minus_1: (z - 1.0).abs(),
                cross_coupling_contrib: (z - lookup(0.0, v)).abs(),
            }
        })
        .collect())
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn run_sweep(
    cfg: &ScenarioConfig,
    jobs: Option<usize>,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.sweep;
    let base = cfg.surface.toy_params().expect("checked in prepare");
    let rows = sweep_table(base, p, &cfg.step, jobs)?;
    let table: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            vec![
                Cell::Num(r.c),
                Cell::Num(r.v0),
                Cell::Num(r.zeta1_end),
                Cell::Num(r.abs_zeta1_minus_1),
                Cell::Num(r.cross_coupling_contrib),
            ]
        })
        .collect();
    art.write("sweep.csv", |w| {
        write_table(
            w,
            &[
                "c",
                "V0",
                "zeta1_end",
                "abs_zeta1_minus_1",
                "cross_coupling_contrib",
            ],
            &table,
        )
    })?;

    // trends: toward jamming (V0 decreasing) per c > 0, and in c per V0
    let mut toward_jamming = serde_json::Map::new();
    for &c in p.c_values.iter().filter(|c| **c > 0.0) {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.c == c)
            .map(|r| (r.v0, r.abs_zeta1_minus_1))
            .collect();
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        toward_jamming.insert(fmt_f64(c), Value::Bool(strictly_increasing(&ys)));
    }
    let mut in_coupling = serde_json::Map::new();
    for &v in &p.v0_values {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.v0 == v && r.c > 0.0)
            .map(|r| (r.c, r.cross_coupling_contrib))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        in_coupling.insert(fmt_f64(v), Value::Bool(strictly_increasing(&ys)));
    }
    Ok(json!({
        "rows": rows.len(),
        "abs_zeta1_minus_1_increases_toward_jamming": toward_jamming,
        "cross_coupling_increases_with_c": in_coupling,
    }))
}

fn run_holonomy(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.holonomy;
    let lp = holonomy_loop(p);
    let value = holonomy(surface, &lp, p.channel)?;
    let stokes = if p.vertices.is_none() {
        Some(stokes_holonomy(
            surface,
            p.v_range,
            p.sigma_range,
            p.channel,
            p.stokes_cells,
        )?)
    } else {
        None
    };
    let doc = json!({
        "channel": p.channel,
        "vertices": lp.vertices,
        "samples_per_edge": lp.samples_per_edge,
        "holonomy": num(value),
        "stokes": stokes.map(num),
        "stokes_abs_diff": stokes.map(|s| num((s - value).abs())),
    });
    art.write_json("holonomy.json", &doc)?;
    Ok(json!({
        "holonomy": num(value),
        "stokes": stokes.map(num),
        "stokes_abs_diff": stokes.map(|s| num((s - value).abs())),
    }))
}

fn run_stability(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.stability;
    let map = stability_map(surface, &p.grid)?;
    let ratios = match p.sigma_ref {
        Some(s) => critical_stress_ratios(surface, &map, s, p.k_mu, p.r, &cfg.step),
        None => vec![f64::NAN; map.contour_points().count()],
    };
    art.write("stability.csv", |w| write_stability_csv(w, &map))?;
    art.write("contour.csv", |w| write_contour_csv(w, &map, &ratios))?;
    let valid: Vec<_> = map.cells.iter().filter(|c| c.valid).collect();
    let worst_band = map
        .contour_points()
        .map(|c| c.det_g.abs() / c.zero_band)
        .fold(0.0, f64::max);
    let finite_m: Vec<f64> = ratios.iter().copied().filter(|m| m.is_finite()).collect();
    Ok(json!({
        "cells": map.cells.len(),
        "valid_cells": valid.len(),
        "stable_cells": valid.iter().filter(|c| c.stable).count(),
        "critical_cells": map.critical_cells,
        "contour_points": map.contour_points().count(),
        "max_contour_det_over_band": num(worst_band),
        "critical_stress_ratio_min": finite_m.iter().copied().reduce(f64::min).map(num),
        "critical_stress_ratio_max": finite_m.iter().copied().reduce(f64::max).map(num),
    }))
}

fn run_dilatancy(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.dilatancy;
    let k = p.k.unwrap_or(DILATANCY_REMAINDER_K);
    let mut rows = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut all_within = true;
    let mut vacuous = 0;
    for &v in &p.v_values {
        for &s in &p.sigma_values {
            let r = dilatancy_at(surface, &[v, s])?;
            let within = r.vacuous || (r.d_geom - r.d_path).abs() <= k * r.remainder_bound;
            if r.vacuous {
                vacuous += 1;
            } else {
                max_ratio = max_ratio.max(r.remainder_ratio());
            }
            all_within &= within;
            rows.push(vec![
                Cell::Num(v),
                Cell::Num(s),
                Cell::Num(r.d_geom),
                Cell::Num(r.d_path),
                Cell::Num(r.remainder_bound),
                Cell::Bool(r.vacuous),
                Cell::Bool(within),
            ]);
        }
    }
    art.write("dilatancy.csv", |w| {
        write_table(
            w,
            &[
                "V",
                "sigma",
                "D_geom",
                "D_path",
                "remainder_bound",
                "vacuous",
                "within_bound",
            ],
            &rows,
        )
    })?;
    Ok(json!({
        "k": num(k),
        "points": rows.len(),
        "vacuous_points": vacuous,
        "max_remainder_ratio": num(max_ratio),
        "all_within_bound": all_within,
    }))
}

fn run_rowe(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.rowe;
    let mut rows = Vec::new();
    let mut departures = Vec::new();
    for &v0 in &p.v0_values {
        let q0 = vec![v0, p.sigma_start];
        let path =
            trace_level_set(surface, &q0, STRESS, p.sigma_end, &cfg.step)?.into_complete()?;
        let q = path.end().q.clone();
        let reference = ZetaReference { q0, lambda: 1.0 };
        let r = rowe_at(surface, &q, p.k_mu, p.r, &reference, &cfg.step)?;
        departures.push((v0, (r.stress_ratio - r.classical_ratio).abs()));
        rows.push(vec![
            Cell::Num(v0),
            Cell::Num(q[VOLUME]),
            Cell::Num(q[STRESS]),
            Cell::Num(r.zeta_v),
            Cell::Num(r.stress_ratio),
            Cell::Num(r.classical_ratio),
            Cell::Num(r.det_g),
            Cell::Bool(r.is_stable),
            Cell::Bool(r.is_critical),
        ]);
    }
    art.write("rowe.csv", |w| {
        write_table(
            w,
            &[
                "V0",
                "V",
                "sigma",
                "zeta_V",
                "stress_ratio",
                "classical_ratio",
                "det_g",
                "stable",
                "critical",
            ],
            &rows,
        )
    })?;
    departures.sort_by(|a, b| b.0.total_cmp(&a.0));
    let ys: Vec<f64> = departures.iter().map(|d| d.1).collect();
    Ok(json!({
        "points": rows.len(),
        "departure_increases_toward_jamming": strictly_increasing(&ys),
    }))
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| nums(&m.row(i).iter().copied().collect::<Vec<_>>()))
            .collect(),
    )
}

fn run_fluctuation(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.fluctuation;
    let sc = sampler_config(cfg);
    let report = if p.dump_samples {
        let mut result = None;
        art.write("samples.csv", |w| {
            let mut out = csv::Writer::from_writer(w);
            let n = surface.dim();
            out.write_record((0..n).map(|k| format!("q{k}")))?;
            let mut sink = |q: &[f64]| -> Result<(), McteError> {
                out.write_record(q.iter().map(|x| fmt_f64(*x)))?;
                Ok(())
            };
            result = Some(sample_metric_with_sink(surface, &sc, &mut sink)?);
            out.flush()?;
            Ok(())
        })?;
        result.expect("sampler ran")
    } else if p.chains > 1 {
        sample_metric_chains(surface, &sc, p.chains)?
    } else {
        sample_metric(surface, &sc)?
    };
    let z = report.z_scores();
    let n = surface.dim();
    let sign_match: Vec<Value> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            Value::Bool(report.g_sampled[(i, j)].signum() == report.g_analytic[(i, j)].signum())
        })
        .collect();
    let doc = json!({
        "g_analytic": matrix_rows(&report.g_analytic),
        "g_sampled": matrix_rows(&report.g_sampled),
        "std_err": matrix_rows(&report.std_err),
        "z_scores": matrix_rows(&z),
        "rel_err_frobenius": num(report.rel_err_frobenius),
        "ess": num(report.ess),
        "acceptance_rate": num(report.acceptance_rate),
        "proposal_scale": nums(&report.proposal_scale),
        "n_samples": report.n_samples,
        "chains": p.chains,
        "seed": cfg.seed,
        "mean": nums(&report.mean),
        "covariance_condition": num(report.covariance_condition),
        "off_diagonal_sign_match": sign_match,
    });
    art.write_json("oracle.json", &doc)?;
    Ok(json!({
        "rel_err_frobenius": num(report.rel_err_frobenius),
        "ess": num(report.ess),
        "acceptance_rate": num(report.acceptance_rate),
        "max_z_score": num(z.iter().copied().fold(0.0, f64::max)),
        "off_diagonal_sign_match": sign_match,
    }))
}

fn run_sign_error(
    cfg: &ScenarioConfig,
    surface: &EntropySurface,
    art: &mut Artifacts,
) -> Result<Value, McteError> {
    let p = &cfg.sign_error;
    let rep = sign_flip_diagnostic(surface, &p.q0, p.target, &cfg.step)?;
    art.write("path.csv", |w| write_path_csv(w, &rep.correct))?;
    art.write("path_flipped.csv", |w| write_path_csv(w, &rep.flipped))?;
    Ok(json!({
        "drift_correct": num(rep.drift_correct),
        "drift_flipped": num(rep.drift_flipped),
        "s_drift_max": num(rep.s_drift_max),
        "vacuous": rep.vacuous,
    }))
}
