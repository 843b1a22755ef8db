//! Best local-hidden-state cheating strategy against a given analyzer.
//!
//! A pure state `b` sent to Bob, with Alice answering each setting by the
//! sign Bob is most likely to see, scores `Σ_s m_s(b)²`, where `m_s` is Bob's
//! conditional mean in setting `s`. Squared means are convex in the state, so
//! the maximum over all ensembles is attained by a single pure state and the
//! search runs over the unit sphere.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analyzer::AnalyzerModel;
use crate::error::{Error, Result};
use crate::evaluator::{poisson_resample, replica_rng};
use crate::optim::nelder_mead_max;
use crate::par;
use crate::quantum::norm3;
use crate::setting::{PerSetting, Setting};
use crate::tomography::{reconstruct_analyzer, ProbeSet, TomographyConfig, TomographyCounts};

/// `Σ_s m_s(b)²` for a unit Bloch vector `b`.
pub fn cheat_value(b: [f64; 3], analyzer: &AnalyzerModel) -> Result<f64> {
    let n = norm3(b);
    if !((n - 1.0).abs() <= 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "cheating state must be pure, |b| = {n}"
        )));
    }
    Ok(objective(b, analyzer))
}

fn objective(b: [f64; 3], analyzer: &AnalyzerModel) -> f64 {
    Setting::ALL
        .iter()
        .map(|&s| analyzer.effects(s).conditional_mean(b).powi(2))
        .sum()
}

fn spherical(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    norm3(cross).atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Orthonormal tangent basis at unit vector `b`.
fn tangent_basis(b: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if b[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = b[0] * helper[0] + b[1] * helper[1] + b[2] * helper[2];
    let e1 = normalize([helper[0] - d * b[0], helper[1] - d * b[1], helper[2] - d * b[2]]);
    let e2 = [
        b[1] * e1[2] - b[2] * e1[1],
        b[2] * e1[0] - b[0] * e1[2],
        b[0] * e1[1] - b[1] * e1[0],
    ];
    (e1, e2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Coarse grid spacing in both polar and azimuthal angle.
    pub grid_step_deg: f64,
    /// Spread of simplex values at which refinement stops.
    pub tolerance: f64,
    /// Evaluation budget for all refinements together.
    pub max_evals: usize,
    /// Number of distinct grid peaks refined.
    pub starts: usize,
    /// Largest certificate gap still reported as certified.
    pub max_gap: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            grid_step_deg: 1.0,
            tolerance: 1e-10,
            max_evals: 20_000,
            starts: 6,
            max_gap: 0.1,
        }
    }
}

/// Grid-based bound on the true maximum.
///
/// Every point of the sphere lies within `covering_radius` of a grid point, so
/// with a Lipschitz constant `L` the maximum is at most
/// `grid_best + L·covering_radius`. `L` is estimated from the largest slope
/// between neighbouring grid points, inflated by 1.5.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub grid_best: f64,
    pub grid_argmax: [f64; 3],
    pub grid_points: usize,
    pub lipschitz: f64,
    pub covering_radius: f64,
    pub upper_bound: f64,
    /// `upper_bound − s_max`, never negative.
    pub gap: f64,
    pub certified: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheatResult {
    pub s_max: f64,
    pub argmax_bloch: [f64; 3],
    pub optimizer_evals: usize,
    /// False when the evaluation budget ran out before the simplex collapsed.
    pub converged: bool,
    pub certificate: Certificate,
}

struct Grid {
    n_theta: usize,
    n_phi: usize,
    step: f64,
    values: Vec<Vec<f64>>,
}

impl Grid {
    fn point(&self, i: usize, j: usize) -> [f64; 3] {
        spherical(i as f64 * self.step, j as f64 * self.step)
    }

    fn evaluate(analyzer: &AnalyzerModel, step_deg: f64) -> Grid {
        let n_theta = (180.0 / step_deg).round() as usize + 1;
        let n_phi = (360.0 / step_deg).round() as usize;
        let step = std::f64::consts::PI / (n_theta - 1) as f64;
        let values = par::map_indexed(n_theta, |i| {
            (0..n_phi)
                .map(|j| objective(spherical(i as f64 * step, j as f64 * step), analyzer))
                .collect::<Vec<_>>()
        });
        Grid {
            n_theta,
            n_phi,
            step,
            values,
        }
    }

    fn lipschitz(&self) -> f64 {
        let mut slope = 0.0f64;
        for i in 0..self.n_theta {
            for j in 0..self.n_phi {
                let here = self.values[i][j];
                let p = self.point(i, j);
                let mut consider = |ii: usize, jj: usize| {
                    let d = angle_between(p, self.point(ii, jj));
                    if d > 1e-12 {
                        slope = slope.max((self.values[ii][jj] - here).abs() / d);
                    }
                };
                consider(i, (j + 1) % self.n_phi);
                if i + 1 < self.n_theta {
                    consider(i + 1, j);
                }
            }
        }
        slope
    }

    /// Grid indices of the highest values, at least `min_sep` radians apart.
    fn peaks(&self, count: usize, min_sep: f64) -> Vec<(usize, usize)> {
        let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(self.n_theta * self.n_phi);
        for i in 0..self.n_theta {
            let row = if i == 0 || i + 1 == self.n_theta { 1 } else { self.n_phi };
            for j in 0..row {
                all.push((self.values[i][j], i, j));
            }
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for (_, i, j) in all {
            let p = self.point(i, j);
            if chosen
                .iter()
                .all(|&(ci, cj)| angle_between(p, self.point(ci, cj)) >= min_sep)
            {
                chosen.push((i, j));
                if chosen.len() == count {
                    break;
                }
            }
        }
        chosen
    }
}

fn refine(
    analyzer: &AnalyzerModel,
    start: [f64; 3],
    step: f64,
    tol: f64,
    budget: usize,
) -> ([f64; 3], f64, usize, bool) {
    let (e1, e2) = tangent_basis(start);
    let chart = |x: &[f64]| {
        normalize([
            start[0] + x[0] * e1[0] + x[1] * e2[0],
            start[1] + x[0] * e1[1] + x[1] * e2[1],
            start[2] + x[0] * e1[2] + x[1] * e2[2],
        ])
    };
    let f = |x: &[f64]| objective(chart(x), analyzer);
    let first = nelder_mead_max(f, &[0.0, 0.0], step, tol, budget);
    // restart from the optimum with a small simplex to catch premature collapse
    let remaining = budget.saturating_sub(first.evals).max(1);
    let second = nelder_mead_max(f, &first.x, step * 1e-2, tol, remaining);
    let best = if second.value >= first.value { second.clone() } else { first.clone() };
    (
        chart(&best.x),
        best.value,
        first.evals + second.evals,
        first.converged && second.converged,
    )
}

/// Two-stage maximization of [`cheat_value`]: a coarse grid over the sphere,
/// then simplex refinement from the best separated grid peaks.
pub fn max_cheat_value(analyzer: &AnalyzerModel, cfg: &OptimizerConfig) -> Result<CheatResult> {
    if !(cfg.grid_step_deg > 0.0 && cfg.grid_step_deg <= 45.0) {
        return Err(Error::InvalidParameter(format!(
            "grid step {}° outside (0, 45]",
            cfg.grid_step_deg
        )));
    }
    let grid = Grid::evaluate(analyzer, cfg.grid_step_deg);
    let peaks = grid.peaks(cfg.starts.max(1), 5.0 * grid.step);
    let (gi, gj) = peaks[0];
    let grid_best = grid.values[gi][gj];
    let grid_argmax = grid.point(gi, gj);

    let budget = (cfg.max_evals / peaks.len()).max(10);
    let refined = par::map_slice(&peaks, |&(i, j)| {
        refine(analyzer, grid.point(i, j), grid.step, cfg.tolerance, budget)
    });
    let mut evals = 0;
    let mut converged = true;
    let mut best = (grid_argmax, grid_best);
    for (b, v, n, ok) in refined {
        evals += n;
        converged &= ok;
        if v > best.1 {
            best = (b, v);
        }
    }
    if !converged {
        log::warn!("adversary refinement hit its evaluation budget; reporting best so far");
    }

    let lipschitz = 1.5 * grid.lipschitz();
    let covering_radius = grid.step / std::f64::consts::SQRT_2;
    let upper_bound = grid_best + lipschitz * covering_radius;
    let gap = (upper_bound - best.1).max(0.0);
    Ok(CheatResult {
        s_max: best.1,
        argmax_bloch: best.0,
        optimizer_evals: evals + grid.n_theta * grid.n_phi,
        converged,
        certificate: Certificate {
            grid_best,
            grid_argmax,
            grid_points: grid.n_theta * grid.n_phi,
            lipschitz,
            covering_radius,
            upper_bound,
            gap,
            certified: gap <= cfg.max_gap,
        },
    })
}

/// Alice's heralding efficiency at which `3ηV² = 1`.
pub fn min_efficiency(visibility: f64) -> Result<f64> {
    if !(visibility > 0.0 && visibility <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "visibility {visibility} outside (0, 1]"
        )));
    }
    Ok(1.0 / (3.0 * visibility * visibility))
}

/// Spread of the adversary bound under Poisson noise in the tomography data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundError {
    pub sigma: f64,
    pub mean: f64,
    pub replicas: usize,
    pub failed: usize,
}

/// Poisson-resamples every tomography count, reconstructs the analyzer and
/// re-optimizes the cheating value for each replica. Replicas whose
/// reconstruction fails are skipped; more than 10 % failures is an error.
pub fn mc_cheat_bound_error<R: Rng + ?Sized>(
    counts: &PerSetting<TomographyCounts>,
    probes: &ProbeSet,
    n_resamples: usize,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<BoundError> {
    if n_resamples < 2 {
        return Err(Error::InvalidArgument("need at least 2 replicas".into()));
    }
    let base: u64 = rng.gen();
    let tomo = TomographyConfig::default();
    let values: Vec<Option<f64>> = par::map_indexed(n_resamples, |i| {
        let mut r = replica_rng(base, i);
        let resampled = counts.map(|_, c| TomographyCounts {
            counts: c
                .counts
                .iter()
                .map(|row| row.map(|n| poisson_resample(n, &mut r)))
                .collect(),
        });
        let rec = reconstruct_analyzer(&resampled, probes, &tomo).ok()?;
        max_cheat_value(&rec.analyzer, cfg).ok().map(|c| c.s_max)
    });
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let failed = n_resamples - ok.len();
    if failed * 10 > n_resamples {
        return Err(Error::InsufficientData(format!(
            "{failed} of {n_resamples} tomography replicas failed to reconstruct"
        )));
    }
    if ok.len() < 2 {
        return Err(Error::InsufficientData("fewer than 2 usable replicas".into()));
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    Ok(BoundError {
        sigma: var.sqrt(),
        mean,
        replicas: ok.len(),
        failed,
    })
}
