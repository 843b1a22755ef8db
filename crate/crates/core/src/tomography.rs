//! Maximum-likelihood detector tomography of Bob's analyzer.
//!
//! For each setting the analyzer is a three-outcome POVM `{E₊, E₋, E₀}` with
//! `E₀` the loss effect. The POVM is parametrized by a 6×2 isometry `G`
//! stacked from three 2×2 blocks, `E_k = G_k†G_k`, so positivity and
//! completeness hold at every iterate. The multinomial log-likelihood is
//! climbed by Riemannian gradient steps on the isometry manifold with a polar
//! retraction and backtracking, which makes every accepted step an ascent.

use std::io::{Read, Write};

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::analyzer::{AnalyzerModel, EffectPair};
use crate::error::{Error, Result};
use crate::par;
use crate::quantum::{dot3, norm3, Operator2, QubitState};
use crate::setting::{Outcome, PerSetting, Setting};

/// Pure probe states with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    labels: Vec<String>,
    states: Vec<QubitState>,
}

impl ProbeSet {
    /// H, V, +45°, −45°, R, L.
    pub fn standard() -> Self {
        let probes = [
            ("H", [0.0, 0.0, 1.0]),
            ("V", [0.0, 0.0, -1.0]),
            ("+45", [1.0, 0.0, 0.0]),
            ("-45", [-1.0, 0.0, 0.0]),
            ("R", [0.0, 1.0, 0.0]),
            ("L", [0.0, -1.0, 0.0]),
        ];
        ProbeSet {
            labels: probes.iter().map(|p| p.0.to_string()).collect(),
            states: probes
                .iter()
                .map(|p| QubitState::new(p.1).expect("unit vector"))
                .collect(),
        }
    }

    /// Requires the probe densities to span the 4-dimensional Hermitian space.
    pub fn new(probes: Vec<(String, QubitState)>) -> Result<Self> {
        let set = ProbeSet {
            labels: probes.iter().map(|p| p.0.clone()).collect(),
            states: probes.iter().map(|p| p.1).collect(),
        };
        set.gram_inverse()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn states(&self) -> &[QubitState] {
        &self.states
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn design_row(b: [f64; 3]) -> Vector4<f64> {
        Vector4::new(1.0, b[0], b[1], b[2])
    }

    /// `(AᵀA)⁻¹` for the design matrix with rows `[1, b_p]`.
    fn gram_inverse(&self) -> Result<Matrix4<f64>> {
        let mut gram = Matrix4::zeros();
        for s in &self.states {
            let r = Self::design_row(s.bloch());
            gram += r * r.transpose();
        }
        let eig = gram.symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if !(lo > 1e-9 * hi.max(1.0)) {
            return Err(Error::InvalidProbes(
                "probe states are not informationally complete".into(),
            ));
        }
        gram.try_inverse()
            .ok_or_else(|| Error::InvalidProbes("singular probe Gram matrix".into()))
    }
}

/// Detector responses per probe: counts for outcomes +1, −1 and none.
///
/// Counts are `f64` so that exact probabilities scaled to a large shot number
/// can stand in for infinite statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyCounts {
    /// `counts[probe][outcome.index()]`.
    pub counts: Vec<[f64; 3]>,
}

impl TomographyCounts {
    pub fn shots(&self, probe: usize) -> f64 {
        self.counts[probe].iter().sum()
    }

    /// Expected counts `shots · tr(E ρ_p)` without sampling noise.
    pub fn exact(pair: &EffectPair, probes: &ProbeSet, shots: f64) -> Self {
        TomographyCounts {
            counts: probes
                .states()
                .iter()
                .map(|st| {
                    let (p, m) = pair.probabilities(st.bloch());
                    [shots * p, shots * m, shots * (1.0 - p - m).max(0.0)]
                })
                .collect(),
        }
    }

    fn validate(&self, probes: &ProbeSet) -> Result<()> {
        if self.counts.len() != probes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} probe rows for {} probes",
                self.counts.len(),
                probes.len()
            )));
        }
        for (p, row) in self.counts.iter().enumerate() {
            if !row.iter().all(|c| c.is_finite() && *c >= 0.0) {
                return Err(Error::InvalidArgument(format!("probe {p} has an invalid count")));
            }
            if self.shots(p) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "probe {} has no recorded shots",
                    probes.labels()[p]
                )));
            }
        }
        Ok(())
    }
}

/// Multinomial forward model for one setting.
pub fn simulate_probe_counts<R: Rng + ?Sized>(
    analyzer: &AnalyzerModel,
    s: Setting,
    probes: &ProbeSet,
    shots: u64,
    rng: &mut R,
) -> Result<TomographyCounts> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let pair = analyzer.effects(s);
    let counts = probes
        .states()
        .iter()
        .map(|st| {
            let (p, m) = pair.probabilities(st.bloch());
            let p = p.clamp(0.0, 1.0);
            let n_plus = binomial(shots, p, rng);
            let rest = shots - n_plus;
            let m_cond = if p < 1.0 { (m / (1.0 - p)).clamp(0.0, 1.0) } else { 0.0 };
            let n_minus = binomial(rest, m_cond, rng);
            [n_plus as f64, n_minus as f64, (rest - n_minus) as f64]
        })
        .collect();
    Ok(TomographyCounts { counts })
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

/// Stopping rule and iteration budget for [`reconstruct_setting`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomographyConfig {
    /// Minimum gain of the multinomial log-likelihood `Σ n log p` per
    /// iteration that keeps the ascent going.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the maximally mixed POVM blended into a starting point whose
    /// smallest effect eigenvalue falls below this value.
    pub start_mixing: f64,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        TomographyConfig {
            tolerance: 1e-10,
            max_iterations: 20_000,
            start_mixing: 1e-3,
        }
    }
}

/// One setting's fit.
#[derive(Clone, Debug)]
pub struct SettingFit {
    pub effects: EffectPair,
    /// Per-shot log-likelihood after each accepted iterate, starting point first.
    /// Multiply by the total shot count for the multinomial log-likelihood.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub analyzer: AnalyzerModel,
    pub fits: PerSetting<SettingFit>,
}

impl Reconstruction {
    pub fn converged(&self) -> bool {
        self.fits.iter().all(|(_, f)| f.converged)
    }
}

/// Reconstructs all three settings (independently, in parallel when enabled).
pub fn reconstruct_analyzer(
    counts: &PerSetting<TomographyCounts>,
    probes: &ProbeSet,
    cfg: &TomographyConfig,
) -> Result<Reconstruction> {
    probes.gram_inverse()?;
    let data = [&counts.x, &counts.y, &counts.z];
    let mut fits = par::map_slice(&data, |c| reconstruct_setting(c, probes, cfg)).into_iter();
    let fits = PerSetting {
        x: fits.next().expect("three fits")?,
        y: fits.next().expect("three fits")?,
        z: fits.next().expect("three fits")?,
    };
    let analyzer = AnalyzerModel::new(fits.map(|_, f| f.effects))?;
    for (s, f) in fits.iter() {
        if !f.converged {
            log::warn!("tomography for setting {s} stopped before convergence");
        }
    }
    Ok(Reconstruction { analyzer, fits })
}

/// Three 2×2 blocks of the isometry; `E_k = G_k† G_k`.
type Blocks = [Operator2; 3];

struct Likelihood<'a> {
    /// Per-shot frequencies `n_kp / N_total`.
    freq: Vec<[f64; 3]>,
    probes: &'a [Operator2],
}

impl Likelihood<'_> {
    fn value(&self, g: &Blocks) -> f64 {
        let effects = g.map(|b| b.adjoint() * b);
        let mut total = 0.0;
        for (f, rho) in self.freq.iter().zip(self.probes) {
            for k in 0..3 {
                if f[k] > 0.0 {
                    let p = effects[k].trace_product(rho);
                    if p <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += f[k] * p.ln();
                }
            }
        }
        total
    }

    /// `R_k = Σ_p (f_kp / p_kp) ρ_p`.
    fn ratios(&self, g: &Blocks) -> Blocks {
        let effects = g.map(|b| b.adjoint() * b);
        let mut r = [Operator2::zero(); 3];
        for (f, rho) in self.freq.iter().zip(self.probes) {
            for k in 0..3 {
                if f[k] > 0.0 {
                    let p = effects[k].trace_product(rho);
                    r[k] = r[k] + rho.scale(f[k] / p);
                }
            }
        }
        r
    }
}

fn hermitian_part(m: &Operator2) -> Operator2 {
    (*m + m.adjoint()).scale(0.5)
}

/// Polar retraction back onto the isometry manifold.
fn retract(y: &Blocks) -> Blocks {
    let gram = y[0].adjoint() * y[0] + y[1].adjoint() * y[1] + y[2].adjoint() * y[2];
    let norm = hermitian_part(&gram).inv_sqrt();
    y.map(|b| b * norm)
}

fn frobenius_sq(blocks: &Blocks) -> f64 {
    blocks.iter().map(|b| (b.adjoint() * *b).trace().re).sum()
}

/// Least-squares linear inversion of `p_kp = a_k + e_k·b_p`.
fn linear_inversion(counts: &TomographyCounts, probes: &ProbeSet) -> Result<[(f64, [f64; 3]); 3]> {
    let ginv = probes.gram_inverse()?;
    let mut out = [(0.0, [0.0; 3]); 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut rhs = Vector4::zeros();
        for (p, st) in probes.states().iter().enumerate() {
            let freq = counts.counts[p][k] / counts.shots(p);
            rhs += ProbeSet::design_row(st.bloch()) * freq;
        }
        let sol = ginv * rhs;
        *slot = (sol[0], [sol[1], sol[2], sol[3]]);
    }
    Ok(out)
}

fn starting_point(counts: &TomographyCounts, probes: &ProbeSet, mixing: f64) -> Result<Blocks> {
    let li = linear_inversion(counts, probes)?;
    let plus = Operator2::from_pauli(li[0].0, li[0].1).clip_negative();
    let minus = Operator2::from_pauli(li[1].0, li[1].1).clip_negative();
    let rest = (Operator2::identity() - plus - minus).clip_negative();
    // plus + minus + rest ≥ I, so the normalization is well defined
    let norm = hermitian_part(&(plus + minus + rest)).inv_sqrt();
    let effects = [plus, minus, rest].map(|e| hermitian_part(&(norm * e * norm)));
    // A zero eigenvalue is never revived by the multiplicative ascent, so
    // rank-deficient starts are blended toward the maximally mixed POVM.
    let floor = effects.iter().map(|e| e.eigenvalues()[0]).fold(f64::INFINITY, f64::min);
    let w = if floor < mixing { mixing } else { 0.0 };
    let third = Operator2::identity().scale(w / 3.0);
    let effects = effects.map(|e| e.scale(1.0 - w) + third);
    // E_k = G_k†G_k with G_k = √E_k; the blocks already form an isometry.
    Ok(retract(&effects.map(|e| e.sqrt_psd())))
}

/// Maximum-likelihood POVM for one setting.
pub fn reconstruct_setting(
    counts: &TomographyCounts,
    probes: &ProbeSet,
    cfg: &TomographyConfig,
) -> Result<SettingFit> {
    counts.validate(probes)?;
    let total: f64 = (0..probes.len()).map(|p| counts.shots(p)).sum();
    let lik = Likelihood {
        freq: counts.counts.iter().map(|row| row.map(|c| c / total)).collect(),
        probes: &probes.states().iter().map(|s| s.density()).collect::<Vec<_>>(),
    };

    let mut g = starting_point(counts, probes, cfg.start_mixing)?;
    let mut value = lik.value(&g);
    let mut trace = vec![value];
    let mut step = 1.0;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        let r = lik.ratios(&g);
        let euclid: Blocks = std::array::from_fn(|k| g[k] * r[k]);
        let inner = g[0].adjoint() * euclid[0] + g[1].adjoint() * euclid[1] + g[2].adjoint() * euclid[2];
        let sym = hermitian_part(&inner);
        let grad: Blocks = std::array::from_fn(|k| euclid[k] - g[k] * sym);
        let grad_sq = frobenius_sq(&grad);
        if grad_sq < 1e-30 {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut t = step;
        while t > 1e-16 {
            let y: Blocks = std::array::from_fn(|k| g[k] + grad[k].scale(t));
            let candidate = retract(&y);
            let v = lik.value(&candidate);
            if v >= value + 1e-4 * t * grad_sq {
                accepted = Some((candidate, v, t));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, v, t)) => {
                let gain = v - value;
                g = candidate;
                value = v;
                trace.push(value);
                step = (2.0 * t).min(8.0);
                if gain * total < cfg.tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                // no ascent direction left at machine precision
                converged = true;
                break;
            }
        }
    }

    let effects = g.map(|b| hermitian_part(&(b.adjoint() * b)));
    Ok(SettingFit {
        effects: EffectPair {
            plus: effects[0],
            minus: effects[1],
        },
        log_likelihood: trace,
        converged,
    })
}

/// Largest `|tr(Π_i Π_j) − ½|` over pairs of settings, where `Π_s` is the
/// pure projector along the principal axis of `E₊ − E₋`.
pub fn mub_deviation(analyzer: &AnalyzerModel) -> Result<f64> {
    let dirs = PerSetting::from_fn(|s| measurement_axis(analyzer.effects(s)));
    let dirs = [dirs.x?, dirs.y?, dirs.z?];
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in (i + 1)..3 {
            // tr(Π_i Π_j) = (1 + n_i·n_j)/2
            worst = worst.max((dot3(dirs[i], dirs[j]) / 2.0).abs());
        }
    }
    Ok(worst)
}

/// Unit Bloch direction of the observable `E₊ − E₋`.
pub fn measurement_axis(pair: &EffectPair) -> Result<[f64; 3]> {
    let (_, e) = (pair.plus - pair.minus).pauli_components();
    let n = norm3(e);
    if n < 1e-12 {
        return Err(Error::UndefinedDirection(
            "E+ − E− has degenerate eigenvalues".into(),
        ));
    }
    Ok([e[0] / n, e[1] / n, e[2] / n])
}

/// `tr(E²)/tr(E)²`: 1 for a rank-one effect, ½ for a multiple of the identity.
pub fn purity(effect: &Operator2) -> f64 {
    let tr = effect.trace().re;
    if tr <= 0.0 {
        0.0
    } else {
        effect.trace_product(effect) / (tr * tr)
    }
}

const OUTCOME_LABELS: [&str; 3] = ["+1", "-1", "none"];

/// Writes `setting,probe_label,outcome,count` rows.
pub fn write_counts_csv<W: Write>(
    counts: &PerSetting<TomographyCounts>,
    probes: &ProbeSet,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    out.write_record(["setting", "probe_label", "outcome", "count"]).map_err(io)?;
    for (s, c) in counts.iter() {
        for (p, row) in c.counts.iter().enumerate() {
            for (k, label) in OUTCOME_LABELS.iter().enumerate() {
                out.write_record([s.name(), &probes.labels()[p], label, &row[k].to_string()])
                    .map_err(io)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Parses counts for all three settings; every probe of `probes` must appear
/// for every setting.
pub fn read_counts_csv<R: Read>(probes: &ProbeSet, r: R) -> Result<PerSetting<TomographyCounts>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let expected = ["setting", "probe_label", "outcome", "count"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::parse(1, format!("expected header {}", expected.join(","))));
    }
    let mut counts = PerSetting::from_fn(|_| TomographyCounts {
        counts: vec![[0.0; 3]; probes.len()],
    });
    let mut seen = PerSetting::from_fn(|_| vec![false; probes.len()]);
    let mut last_line = 1;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        last_line = line;
        let bad = |m: String| Error::parse(line, m);
        let s: Setting = rec[0].parse().map_err(|e: Error| bad(e.to_string()))?;
        let p = probes
            .index_of(&rec[1])
            .ok_or_else(|| bad(format!("unknown probe {:?}", &rec[1])))?;
        let k = match &rec[2] {
            "none" | "0" => Outcome::Inconclusive.index(),
            other => other.parse::<Outcome>().map_err(|e| bad(e.to_string()))?.index(),
        };
        let c: f64 = rec[3]
            .parse()
            .map_err(|_| bad(format!("count {:?} is not a number", &rec[3])))?;
        if !(c.is_finite() && c >= 0.0) {
            return Err(bad(format!("count {c} must be nonnegative")));
        }
        counts[s].counts[p][k] += c;
        seen[s][p] = true;
    }
    for (s, flags) in seen.iter() {
        if let Some(p) = flags.iter().position(|f| !f) {
            return Err(Error::parse(
                last_line + 1,
                format!("missing counts for setting {s}, probe {}", probes.labels()[p]),
            ));
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{rotate_bloch, rotation};
    use crate::evaluator::replica_rng;
    use approx::assert_abs_diff_eq;

    fn exact_counts(a: &AnalyzerModel, shots: f64) -> PerSetting<TomographyCounts> {
        let probes = ProbeSet::standard();
        PerSetting::from_fn(|s| TomographyCounts::exact(a.effects(s), &probes, shots))
    }

    /// Ideal analyzer whose Z effects are rotated by `deg` toward +X.
    fn tilted(deg: f64, eta: f64) -> AnalyzerModel {
        let u = rotation([0.0, 1.0, 0.0], deg.to_radians());
        let mut e = *AnalyzerModel::lossy(eta).all_effects();
        e.z = EffectPair {
            plus: u * e.z.plus * u.adjoint(),
            minus: u * e.z.minus * u.adjoint(),
        };
        AnalyzerModel::new(e).unwrap()
    }

    #[test]
    fn standard_probes_are_complete_and_degenerate_sets_are_not() {
        assert!(ProbeSet::standard().gram_inverse().is_ok());
        let flat = ProbeSet::new(vec![
            ("H".into(), QubitState::new([0.0, 0.0, 1.0]).unwrap()),
            ("V".into(), QubitState::new([0.0, 0.0, -1.0]).unwrap()),
            ("+45".into(), QubitState::new([1.0, 0.0, 0.0]).unwrap()),
            ("-45".into(), QubitState::new([-1.0, 0.0, 0.0]).unwrap()),
        ]);
        assert!(matches!(flat, Err(Error::InvalidProbes(_))));
    }

    #[test]
    fn simulated_counts_examples() {
        let probes = ProbeSet::standard();
        let mut rng = replica_rng(4, 0);
        let ideal = AnalyzerModel::ideal();
        let c = simulate_probe_counts(&ideal, Setting::Z, &probes, 1000, &mut rng).unwrap();
        assert_eq!(c.counts[0], [1000.0, 0.0, 0.0]);

        let lossy = AnalyzerModel::lossy(0.6);
        let shots = 100_000;
        let c = simulate_probe_counts(&lossy, Setting::Z, &probes, shots, &mut rng).unwrap();
        let sigma = (0.24f64 / shots as f64).sqrt();
        assert!((c.counts[0][0] / shots as f64 - 0.6).abs() < 5.0 * sigma);
        assert!((c.counts[0][2] / shots as f64 - 0.4).abs() < 5.0 * sigma);

        let c = simulate_probe_counts(&ideal, Setting::Z, &probes, shots, &mut rng).unwrap();
        let sigma = (0.25f64 / shots as f64).sqrt();
        assert!((c.counts[2][0] / shots as f64 - 0.5).abs() < 5.0 * sigma);
        assert_eq!(c.counts[2][2], 0.0);
        assert!(simulate_probe_counts(&ideal, Setting::Z, &probes, 0, &mut rng).is_err());
    }

    #[test]
    fn exact_ideal_data_recovers_projectors() {
        let a = AnalyzerModel::ideal();
        let rec = reconstruct_analyzer(&exact_counts(&a, 1e6), &ProbeSet::standard(), &Default::default())
            .unwrap();
        assert!(rec.converged());
        for s in Setting::ALL {
            let got = rec.analyzer.effects(s);
            let want = a.effects(s);
            assert!(got.plus.trace_distance(&want.plus) < 1e-8, "{s}");
            assert!(got.minus.trace_distance(&want.minus) < 1e-8, "{s}");
        }
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let probes = ProbeSet::standard();
        let mut rng = replica_rng(8, 0);
        for shots in [50u64, 1000, 100_000] {
            let c = simulate_probe_counts(&tilted(5.0, 0.6), Setting::Z, &probes, shots, &mut rng).unwrap();
            let fit = reconstruct_setting(&c, &probes, &Default::default()).unwrap();
            assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn lossy_analyzer_round_trip() {
        let probes = ProbeSet::standard();
        let truth = AnalyzerModel::lossy(0.6);
        let mut rng = replica_rng(21, 0);
        let counts = PerSetting::from_fn(|s| {
            simulate_probe_counts(&truth, s, &probes, 100_000, &mut rng).unwrap()
        });
        let rec = reconstruct_analyzer(&counts, &probes, &Default::default()).unwrap();
        assert!(rec.converged());
        for s in Setting::ALL {
            assert!(rec.analyzer.effects(s).plus.trace_distance(&truth.effects(s).plus) < 0.01);
            assert!(rec.analyzer.effects(s).minus.trace_distance(&truth.effects(s).minus) < 0.01);
        }
    }

    #[test]
    fn tilt_angle_is_recovered() {
        let probes = ProbeSet::standard();
        let truth = tilted(5.0, 0.6);
        let mut rng = replica_rng(22, 0);
        let counts = PerSetting::from_fn(|s| {
            simulate_probe_counts(&truth, s, &probes, 100_000, &mut rng).unwrap()
        });
        let rec = reconstruct_analyzer(&counts, &probes, &Default::default()).unwrap();
        let axis = measurement_axis(rec.analyzer.effects(Setting::Z)).unwrap();
        let tilt = axis[0].atan2(axis[2]).to_degrees();
        assert!((tilt - 5.0).abs() < 0.5, "{tilt}");
    }

    #[test]
    fn mub_deviation_examples() {
        assert!(mub_deviation(&AnalyzerModel::ideal()).unwrap() < 1e-15);
        // Z axis 85° from X: |cos 85°|/2
        let d = mub_deviation(&tilted(5.0, 1.0)).unwrap();
        assert_abs_diff_eq!(d, 85f64.to_radians().cos() / 2.0, epsilon = 1e-12);
        let z = AnalyzerModel::ideal().effects(Setting::Z).to_owned();
        let same = AnalyzerModel::new(PerSetting::splat(z)).unwrap();
        assert_abs_diff_eq!(mub_deviation(&same).unwrap(), 0.5, epsilon = 1e-15);

        let blind = EffectPair {
            plus: Operator2::identity().scale(0.3),
            minus: Operator2::identity().scale(0.3),
        };
        let mut e = *AnalyzerModel::ideal().all_effects();
        e.y = blind;
        assert!(matches!(
            mub_deviation(&AnalyzerModel::new(e).unwrap()),
            Err(Error::UndefinedDirection(_))
        ));
    }

    #[test]
    fn random_analyzers_are_identified_from_exact_data() {
        use rand::Rng;
        let mut rng = replica_rng(31, 0);
        for _ in 0..50 {
            let truth = random_analyzer(&mut rng);
            let rec = reconstruct_analyzer(&exact_counts(&truth, 1e6), &ProbeSet::standard(), &Default::default())
                .unwrap();
            for s in Setting::ALL {
                let (g, w) = (rec.analyzer.effects(s), truth.effects(s));
                assert!(g.plus.trace_distance(&w.plus) < 1e-6);
                assert!(g.minus.trace_distance(&w.minus) < 1e-6);
            }
            let _ = rng.gen::<u8>();
        }
    }

    fn random_analyzer(rng: &mut impl rand::Rng) -> AnalyzerModel {
        AnalyzerModel::new(PerSetting::from_fn(|s| {
            let eta = rng.gen_range(0.3..1.0);
            let purity = rng.gen_range(0.8..1.0);
            let mut axis = [0.0; 3];
            axis[s.index()] = 1.0;
            let turn = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = norm3(turn);
            let axis = rotate_bloch(axis, [turn[0] / n, turn[1] / n, turn[2] / n], rng.gen_range(0.0..0.3));
            let e = axis.map(|c| 0.5 * eta * purity * c);
            EffectPair {
                plus: Operator2::from_pauli(0.5 * eta, e),
                minus: Operator2::from_pauli(0.5 * eta, e.map(|c| -c)),
            }
        }))
        .unwrap()
    }

    #[test]
    fn counts_csv_round_trip_and_truncation() {
        let probes = ProbeSet::standard();
        let mut rng = replica_rng(5, 0);
        let a = AnalyzerModel::lossy(0.7);
        let counts = PerSetting::from_fn(|s| simulate_probe_counts(&a, s, &probes, 500, &mut rng).unwrap());
        let mut buf = Vec::new();
        write_counts_csv(&counts, &probes, &mut buf).unwrap();
        assert_eq!(read_counts_csv(&probes, buf.as_slice()).unwrap(), counts);

        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_counts_csv(&probes, truncated.as_bytes()), Err(Error::Parse { .. })));
    }
}
