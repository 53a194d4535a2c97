//! Metric as the precision matrix of equilibrium fluctuations: a boxed
//! random-walk Metropolis sampler targeting `exp(S(q))`, whose inverse sample
//! covariance is compared with `g(q_center)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{McteError, Result};
use crate::geometry::metric_tensor;
use crate::surface::EntropySurface;

/// Largest covariance condition number accepted before inversion.
pub const MAX_CONDITION: f64 = 1e12;
pub const MIN_SAMPLES: usize = 10_000;
pub const MIN_ESS: f64 = 100.0;

const TUNE_WINDOW: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub q_center: Vec<f64>,
    /// Half-widths of the sampling window per channel.
    #[serde(rename = "box")]
    pub half_width: Vec<f64>,
    pub n_samples: usize,
    pub burn_in: usize,
    /// Initial per-channel proposal standard deviation; tuned during burn-in.
    pub proposal_scale: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    50
}

impl SamplerConfig {
    pub fn validate(&self, surface: &EntropySurface) -> Result<()> {
        let n = surface.dim();
        if self.q_center.len() != n || self.half_width.len() != n || self.proposal_scale.len() != n
        {
            return Err(McteError::InvalidInput(format!(
                "sampler vectors must have the surface dimension {n}"
            )));
        }
        if self.n_samples < MIN_SAMPLES {
            return Err(McteError::InvalidInput(format!(
                "n_samples = {} is below {MIN_SAMPLES}",
                self.n_samples
            )));
        }
        if self.batches < 2 || self.n_samples / self.batches < 10 * n {
            return Err(McteError::InvalidInput(
                "need at least two batches of reasonable size".into(),
            ));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.half_width) || !positive(&self.proposal_scale) {
            return Err(McteError::InvalidInput(
                "box half-widths and proposal scales must be positive".into(),
            ));
        }
        // every corner of the box, and S on a 3^n lattice over it
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let q: Vec<f64> = (0..n)
                .map(|k| {
                    let off = (c % 3) as f64 - 1.0;
                    c /= 3;
                    self.q_center[k] + off * self.half_width[k]
                })
                .collect();
            if !surface.contains(&q) {
                return Err(McteError::Domain {
                    q,
                    reason: "sampling box extends outside the surface domain".into(),
                });
            }
            if !surface.entropy(&q)?.is_finite() {
                return Err(McteError::NonFinite {
                    what: "S on the sampling box",
                    q,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub g_analytic: DMatrix<f64>,
    /// Symmetrized inverse of the sample covariance.
    pub g_sampled: DMatrix<f64>,
    /// Batch-means standard error of each entry of `g_sampled`.
    pub std_err: DMatrix<f64>,
    pub rel_err_frobenius: f64,
    pub ess: f64,
    pub acceptance_rate: f64,
    /// Proposal scale after burn-in tuning.
    pub proposal_scale: Vec<f64>,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub covariance_condition: f64,
}

impl OracleReport {
    /// `|g_sampled - g_analytic| / std_err` per entry.
    pub fn z_scores(&self) -> DMatrix<f64> {
        (&self.g_sampled - &self.g_analytic).zip_map(&self.std_err, |d, s| d.abs() / s)
    }
}

/// Sums of offsets from the box center and their outer products.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    sum: Vec<f64>,
    outer: DMatrix<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; n],
            outer: DMatrix::zeros(n, n),
        }
    }

    fn push(&mut self, d: &[f64]) {
        self.count += 1.0;
        for (k, x) in d.iter().enumerate() {
            self.sum[k] += x;
            for (l, y) in d.iter().enumerate().skip(k) {
                self.outer[(k, l)] += x * y;
            }
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        self.outer += &other.outer;
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count).collect()
    }

    fn covariance(&self) -> DMatrix<f64> {
        let n = self.sum.len();
        let mu = self.mean();
        let mut c = DMatrix::zeros(n, n);
        for k in 0..n {
            for l in k..n {
                let v = (self.outer[(k, l)] - self.count * mu[k] * mu[l]) / (self.count - 1.0);
                c[(k, l)] = v;
                c[(l, k)] = v;
            }
        }
        c
    }
}

struct ChainOutput {
    batches: Vec<Moments>,
    accepted: usize,
    proposal_scale: Vec<f64>,
}

type Sink<'a> = &'a mut dyn FnMut(&[f64]) -> Result<()>;

fn run_chain(
    surface: &EntropySurface,
    cfg: &SamplerConfig,
    seed: u64,
    mut sink: Option<Sink<'_>>,
) -> Result<ChainOutput> {
    let n = surface.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo: Vec<f64> = (0..n)
        .map(|k| cfg.q_center[k] - cfg.half_width[k])
        .collect();
    let hi: Vec<f64> = (0..n)
        .map(|k| cfg.q_center[k] + cfg.half_width[k])
        .collect();
    let mut scale = cfg.proposal_scale.clone();
    let mut q = cfg.q_center.clone();
    let mut s = surface.entropy(&q)?;
    let mut trial = q.clone();

    let mut step =
        |q: &mut Vec<f64>, s: &mut f64, scale: &[f64], rng: &mut ChaCha8Rng| -> Result<bool> {
            let mut inside = true;
            for k in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                trial[k] = q[k] + scale[k] * z;
                inside &= trial[k] > lo[k] && trial[k] < hi[k];
            }
            let u: f64 = rng.random();
            if !inside {
                return Ok(false);
            }
            let s_new = surface.entropy(&trial)?;
            if u.ln() < s_new - *s {
                q.copy_from_slice(&trial);
                *s = s_new;
                return Ok(true);
            }
            Ok(false)
        };

    // burn-in with scale adaptation toward 30-50% acceptance
    let mut window_acc = 0;
    for it in 1..=cfg.burn_in {
        window_acc += usize::from(step(&mut q, &mut s, &scale, &mut rng)?);
        if it % TUNE_WINDOW == 0 {
            let rate = window_acc as f64 / TUNE_WINDOW as f64;
            let factor = if rate < 0.3 {
                0.7
            } else if rate > 0.5 {
                1.4
            } else {
                1.0
            };
            for (sc, w) in scale.iter_mut().zip(&cfg.half_width) {
                *sc = (*sc * factor).min(4.0 * w);
            }
            window_acc = 0;
        }
    }

    let per_batch = cfg.n_samples / cfg.batches;
    let mut batches = vec![Moments::new(n); cfg.batches];
    let mut accepted = 0;
    let mut d = vec![0.0; n];
    for it in 0..cfg.n_samples {
        accepted += usize::from(step(&mut q, &mut s, &scale, &mut rng)?);
        for k in 0..n {
            d[k] = q[k] - cfg.q_center[k];
        }
        batches[(it / per_batch).min(cfg.batches - 1)].push(&d);
        if let Some(sink) = sink.as_mut() {
            sink(&q)?;
        }
    }
    Ok(ChainOutput {
        batches,
        accepted,
        proposal_scale: scale,
    })
}

/// Symmetrized inverse of a covariance via its eigendecomposition.
fn precision(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(McteError::NonErgodic(format!(
            "sample covariance is ill-conditioned (eigenvalues {min:e} .. {max:e})"
        )));
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let p = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
    Ok(((&p + p.transpose()) * 0.5, max / min))
}

fn assemble(
    surface: &EntropySurface,
    cfg: &SamplerConfig,
    chains: Vec<ChainOutput>,
) -> Result<OracleReport> {
    let n = surface.dim();
    let total = cfg.n_samples * chains.len();
    let accepted: usize = chains.iter().map(|c| c.accepted).sum();
    let acceptance_rate = accepted as f64 / total as f64;
    if !(0.05..=0.95).contains(&acceptance_rate) {
        return Err(McteError::NonErgodic(format!(
            "acceptance rate {acceptance_rate:.3} outside [0.05, 0.95]"
        )));
    }
    let batches: Vec<&Moments> = chains.iter().flat_map(|c| c.batches.iter()).collect();
    let mut all = Moments::new(n);
    for b in &batches {
        all.merge(b);
    }
    let cov = all.covariance();
    let (g_sampled, cond) = precision(&cov)?;

    let nb = batches.len() as f64;
    let batch_g: Vec<DMatrix<f64>> = batches
        .iter()
        .map(|b| precision(&b.covariance()).map(|p| p.0))
        .collect::<Result<_>>()?;
    let g_mean = batch_g.iter().fold(DMatrix::zeros(n, n), |acc, g| acc + g) / nb;
    let std_err = batch_g
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, g| {
            acc + (g - &g_mean).map(|x| x * x)
        })
        .map(|v| (v / (nb - 1.0) / nb).sqrt());

    // batch-means effective sample size, worst channel
    let m = all.count / nb;
    let ess = (0..n)
        .map(|k| {
            let means: Vec<f64> = batches.iter().map(|b| b.sum[k] / b.count).collect();
            let mu = means.iter().sum::<f64>() / nb;
            let var_bm = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nb - 1.0);
            (all.count * cov[(k, k)] / (m * var_bm)).min(all.count)
        })
        .fold(f64::INFINITY, f64::min);
    if !(ess > MIN_ESS) {
        return Err(McteError::NonErgodic(format!(
            "effective sample size {ess:.1} <= {MIN_ESS}"
        )));
    }

    let g_analytic = metric_tensor(surface, &cfg.q_center)?;
    let rel_err_frobenius = (&g_sampled - &g_analytic).norm() / g_analytic.norm();
    let mean = all
        .mean()
        .iter()
        .zip(&cfg.q_center)
        .map(|(d, c)| c + d)
        .collect();
    Ok(OracleReport {
        g_analytic,
        g_sampled,
        std_err,
        rel_err_frobenius,
        ess,
        acceptance_rate,
        proposal_scale: chains[0].proposal_scale.clone(),
        n_samples: total,
        mean,
        covariance_condition: cond,
    })
}

pub fn sample_metric(surface: &EntropySurface, cfg: &SamplerConfig) -> Result<OracleReport> {
    cfg.validate(surface)?;
    let chain = run_chain(surface, cfg, cfg.seed, None)?;
    assemble(surface, cfg, vec![chain])
}

/// As [`sample_metric`], passing every retained sample to `sink`.
pub fn sample_metric_with_sink(
    surface: &EntropySurface,
    cfg: &SamplerConfig,
    sink: &mut dyn FnMut(&[f64]) -> Result<()>,
) -> Result<OracleReport> {
    cfg.validate(surface)?;
    let chain = run_chain(surface, cfg, cfg.seed, Some(sink))?;
    assemble(surface, cfg, vec![chain])
}

/// Independent chains seeded `seed, seed + 1, ...`, run in parallel and
/// pooled. `n_samples` is per chain.
pub fn sample_metric_chains(
    surface: &EntropySurface,
    cfg: &SamplerConfig,
    chains: usize,
) -> Result<OracleReport> {
    cfg.validate(surface)?;
    if chains == 0 {
        return Err(McteError::InvalidInput("need at least one chain".into()));
    }
    let outs = (0..chains as u64)
        .into_par_iter()
        .map(|k| run_chain(surface, cfg, cfg.seed.wrapping_add(k), None))
        .collect::<Result<Vec<_>>>()?;
    assemble(surface, cfg, outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::ToyGranularParams;

    fn quad_cfg(n_samples: usize, half: f64) -> SamplerConfig {
        SamplerConfig {
            q_center: vec![0.0, 0.0],
            half_width: vec![half, half],
            n_samples,
            burn_in: 5_000,
            proposal_scale: vec![0.5, 0.5],
            seed: 7,
            batches: 50,
        }
    }

    #[test]
    fn rejects_small_runs_and_escaping_boxes() {
        let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            sample_metric(&s, &quad_cfg(100, 1.0)),
            Err(McteError::InvalidInput(_))
        ));
        let toy = EntropySurface::toy(ToyGranularParams::default()).unwrap();
        let mut cfg = quad_cfg(20_000, 0.1);
        cfg.q_center = vec![0.8, 0.2];
        assert!(matches!(
            sample_metric(&toy, &cfg),
            Err(McteError::Domain { .. })
        ));
    }

    #[test]
    fn seed_determinism() {
        let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
        let a = sample_metric(&s, &quad_cfg(20_000, 6.0)).unwrap();
        let b = sample_metric(&s, &quad_cfg(20_000, 6.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hopeless_proposal_is_non_ergodic() {
        let s = EntropySurface::quadratic(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
        let mut cfg = quad_cfg(20_000, 6.0);
        cfg.burn_in = 0;
        cfg.proposal_scale = vec![1e3, 1e3];
        assert!(matches!(
            sample_metric(&s, &cfg),
            Err(McteError::NonErgodic(_))
        ));
    }

    #[test]
    fn ill_conditioned_covariance_is_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(matches!(precision(&c), Err(McteError::NonErgodic(_))));
        let (p, cond) = precision(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert!((cond - 3.0).abs() < 1e-12);
        assert!((p[(0, 1)] + 1.0 / 3.0).abs() < 1e-12);
    }
}
