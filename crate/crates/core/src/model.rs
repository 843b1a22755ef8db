//! Joint outcome models for an honest (entangled) Alice and for a cheating
//! Alice who holds a local-hidden-state ensemble.
//!
//! All distributions are conditioned on Bob having a conclusive result.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analyzer::AnalyzerModel;
use crate::error::{Error, Result};
use crate::quantum::QubitState;
use crate::setting::{Outcome, PerSetting, Setting};

/// Alice's heralding efficiency, Bob's raw efficiency and per-basis visibility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability that Alice registers a photon given that Bob registered one.
    pub eta_alice: f64,
    /// Bob's detection probability; thins the trial count only.
    pub eta_bob: f64,
    pub visibility: PerSetting<f64>,
}

impl NoiseModel {
    pub fn new(eta_alice: f64, eta_bob: f64, visibility: PerSetting<f64>) -> Result<Self> {
        let m = NoiseModel {
            eta_alice,
            eta_bob,
            visibility,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(eta_alice: f64, visibility: f64) -> Result<Self> {
        Self::new(eta_alice, 1.0, PerSetting::splat(visibility))
    }

    /// Alice's arm efficiency 38.3 % with the measured per-basis visibilities
    /// (H/V 96.23 %, ±45° 95.41 %, R/L 95.05 %).
    pub fn reported() -> Self {
        NoiseModel {
            eta_alice: 0.383,
            eta_bob: 1.0,
            visibility: PerSetting {
                x: 0.9541,
                y: 0.9505,
                z: 0.9623,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("eta_alice", self.eta_alice)?;
        unit("eta_bob", self.eta_bob)?;
        for (s, v) in self.visibility.iter() {
            unit(&format!("visibility[{s}]"), *v)?;
        }
        Ok(())
    }
}

/// `P(a, b | s, Bob conclusive)` over Alice ∈ {+1, −1, 0} and Bob ∈ {+1, −1}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub setting: Setting,
    /// Indexed `[alice.index()][bob.index()]`.
    pub p: [[f64; 2]; 3],
}

impl JointDistribution {
    pub fn get(&self, alice: Outcome, bob: Outcome) -> f64 {
        debug_assert!(bob.is_conclusive());
        self.p[alice.index()][bob.index()]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    pub fn bob_marginal(&self, bob: Outcome) -> f64 {
        (0..3).map(|a| self.p[a][bob.index()]).sum()
    }

    pub fn alice_marginal(&self, alice: Outcome) -> f64 {
        self.p[alice.index()].iter().sum()
    }

    /// Draws one cell by inverse-CDF from a single uniform variate.
    fn sample(&self, u: f64) -> (Outcome, Outcome) {
        let mut acc = 0.0;
        for a in Outcome::ALL {
            for b in Outcome::CONCLUSIVE {
                acc += self.p[a.index()][b.index()];
                if u < acc {
                    return (a, b);
                }
            }
        }
        // u landed in the roundoff gap above the last cumulative sum
        last_nonzero_cell(&self.p)
    }
}

fn last_nonzero_cell(p: &[[f64; 2]; 3]) -> (Outcome, Outcome) {
    for a in Outcome::ALL.iter().rev() {
        for b in Outcome::CONCLUSIVE.iter().rev() {
            if p[a.index()][b.index()] > 0.0 {
                return (*a, *b);
            }
        }
    }
    (Outcome::Inconclusive, Outcome::Minus)
}

/// Honest singlet source with Werner-type noise:
/// `P(a, b) = η(1 − abV)/4` for conclusive `a` and `P(0, b) = (1 − η)/2`.
pub fn honest_distribution(noise: &NoiseModel, s: Setting) -> JointDistribution {
    let eta = noise.eta_alice;
    let v = noise.visibility[s];
    let mut p = [[0.0; 2]; 3];
    for a in Outcome::CONCLUSIVE {
        for b in Outcome::CONCLUSIVE {
            p[a.index()][b.index()] = eta * (1.0 - a.sign() * b.sign() * v) / 4.0;
        }
    }
    for b in Outcome::CONCLUSIVE {
        p[Outcome::Inconclusive.index()][b.index()] = (1.0 - eta) / 2.0;
    }
    JointDistribution { setting: s, p }
}

/// `Σ_i η·V_i²`; reduces to `3ηV²` for isotropic noise.
pub fn predicted_s(noise: &NoiseModel) -> f64 {
    Setting::ALL
        .iter()
        .map(|&s| noise.eta_alice * noise.visibility[s].powi(2))
        .sum()
}

/// One honest trial (Alice, Bob) conditioned on Bob being conclusive.
pub fn sample_honest_trial<R: Rng + ?Sized>(
    noise: &NoiseModel,
    s: Setting,
    rng: &mut R,
) -> (Outcome, Outcome) {
    honest_distribution(noise, s).sample(rng.gen::<f64>())
}

/// Precomputed honest distributions for repeated sampling.
#[derive(Clone, Debug)]
pub struct HonestSampler {
    dists: PerSetting<JointDistribution>,
}

impl HonestSampler {
    pub fn new(noise: &NoiseModel) -> Self {
        HonestSampler {
            dists: PerSetting::from_fn(|s| honest_distribution(noise, s)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: Setting, rng: &mut R) -> (Outcome, Outcome) {
        self.dists[s].sample(rng.gen::<f64>())
    }
}

/// A hidden state handed to Bob together with Alice's deterministic answers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LhsMember {
    pub weight: f64,
    pub state: QubitState,
    pub response: PerSetting<Outcome>,
}

/// A local-hidden-state ensemble: Alice secretly draws a member, sends its
/// state to Bob and answers every setting with the member's response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LhsMember>", into = "Vec<LhsMember>")]
pub struct LhsEnsemble {
    members: Vec<LhsMember>,
}

impl LhsEnsemble {
    pub fn new(members: Vec<LhsMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("empty LHS ensemble".into()));
        }
        if let Some(m) = members.iter().find(|m| !(m.weight >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "negative ensemble weight {}",
                m.weight
            )));
        }
        let total: f64 = members.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "ensemble weights sum to {total}, expected 1"
            )));
        }
        Ok(LhsEnsemble { members })
    }

    /// The eight pure states `(±1, ±1, ±1)/√3` with equal weights, each
    /// answered by the sign of its Bloch component. Reaches S = 1 against
    /// ideal analyzers.
    pub fn optimal() -> Self {
        let c = 1.0 / 3f64.sqrt();
        let members = (0..8)
            .map(|k| {
                let signs = [k & 1, (k >> 1) & 1, (k >> 2) & 1]
                    .map(|bit| if bit == 0 { 1.0 } else { -1.0 });
                let state = QubitState::new([signs[0] * c, signs[1] * c, signs[2] * c])
                    .expect("unit vector");
                let response = PerSetting::from_fn(|s| {
                    if signs[s.index()] > 0.0 {
                        Outcome::Plus
                    } else {
                        Outcome::Minus
                    }
                });
                LhsMember {
                    weight: 0.125,
                    state,
                    response,
                }
            })
            .collect();
        LhsEnsemble { members }
    }

    pub fn members(&self) -> &[LhsMember] {
        &self.members
    }
}

impl TryFrom<Vec<LhsMember>> for LhsEnsemble {
    type Error = Error;
    fn try_from(v: Vec<LhsMember>) -> Result<Self> {
        LhsEnsemble::new(v)
    }
}

impl From<LhsEnsemble> for Vec<LhsMember> {
    fn from(e: LhsEnsemble) -> Self {
        e.members
    }
}

/// Joint distribution produced by an LHS ensemble against Bob's analyzer.
///
/// Each member's Bob statistics are first conditioned on Bob being conclusive
/// for that member (the same conditioning the adversary bound uses); members
/// on which Bob can never be conclusive drop out and the remaining weights are
/// renormalized.
pub fn lhs_distribution(
    ensemble: &LhsEnsemble,
    analyzer: &AnalyzerModel,
    s: Setting,
) -> Result<JointDistribution> {
    let pair = analyzer.effects(s);
    let mut p = [[0.0; 2]; 3];
    let mut weight = 0.0;
    for m in ensemble.members() {
        let (plus, minus) = pair.probabilities(m.state.bloch());
        let total = plus + minus;
        if total <= 0.0 || m.weight == 0.0 {
            continue;
        }
        let a = m.response[s].index();
        p[a][Outcome::Plus.index()] += m.weight * plus / total;
        p[a][Outcome::Minus.index()] += m.weight * minus / total;
        weight += m.weight;
    }
    if weight <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "Bob is never conclusive on this ensemble in setting {s}"
        )));
    }
    for row in p.iter_mut() {
        for cell in row.iter_mut() {
            *cell /= weight;
        }
    }
    Ok(JointDistribution { setting: s, p })
}

/// Precomputed LHS sampling tables for one analyzer.
#[derive(Clone, Debug)]
pub struct LhsSampler {
    cumulative: Vec<f64>,
    responses: Vec<PerSetting<Outcome>>,
    /// Per member and setting: Bob's conditional P(+1), or `None` when Bob
    /// is never conclusive on that member.
    plus_prob: Vec<PerSetting<Option<f64>>>,
}

impl LhsSampler {
    pub fn new(ensemble: &LhsEnsemble, analyzer: &AnalyzerModel) -> Self {
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(ensemble.members().len());
        for m in ensemble.members() {
            acc += m.weight;
            cumulative.push(acc);
        }
        let plus_prob = ensemble
            .members()
            .iter()
            .map(|m| {
                PerSetting::from_fn(|s| {
                    let (p, q) = analyzer.effects(s).probabilities(m.state.bloch());
                    (p + q > 0.0).then(|| p / (p + q))
                })
            })
            .collect();
        LhsSampler {
            cumulative,
            responses: ensemble.members().iter().map(|m| m.response).collect(),
            plus_prob,
        }
    }

    /// Draws a member and both outcomes. Members Bob cannot detect are
    /// redrawn, matching [`lhs_distribution`]'s conditioning.
    pub fn sample<R: Rng + ?Sized>(&self, s: Setting, rng: &mut R) -> (Outcome, Outcome) {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        for _ in 0..10_000 {
            let u = rng.gen::<f64>() * total;
            let k = self
                .cumulative
                .partition_point(|&c| c <= u)
                .min(self.cumulative.len() - 1);
            if let Some(p_plus) = self.plus_prob[k][s] {
                let bob = if rng.gen::<f64>() < p_plus {
                    Outcome::Plus
                } else {
                    Outcome::Minus
                };
                return (self.responses[k][s], bob);
            }
        }
        // Practically unreachable unless almost all weight sits on undetectable members.
        (Outcome::Inconclusive, Outcome::Plus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setting::Outcome::{Inconclusive as Zero, Minus, Plus};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_singlet_distribution() {
        let d = honest_distribution(&NoiseModel::uniform(1.0, 1.0).unwrap(), Setting::Z);
        assert_eq!(d.get(Plus, Minus), 0.5);
        assert_eq!(d.get(Minus, Plus), 0.5);
        assert_eq!(d.get(Plus, Plus), 0.0);
        assert_eq!(d.get(Zero, Plus), 0.0);
    }

    #[test]
    fn noisy_uncorrelated_distribution() {
        let d = honest_distribution(&NoiseModel::uniform(0.5, 0.0).unwrap(), Setting::X);
        for a in Outcome::CONCLUSIVE {
            for b in Outcome::CONCLUSIVE {
                assert_eq!(d.get(a, b), 0.125);
            }
        }
        assert_eq!(d.get(Zero, Plus), 0.25);
        assert_eq!(d.get(Zero, Minus), 0.25);
    }

    #[test]
    fn honest_distribution_matches_werner_born_rule() {
        // Cross-check against the 4×4 state: lossy ideal effects on Alice's
        // side, projective effects on Bob's, renormalized over Bob conclusive.
        use crate::quantum::werner;
        let (eta, v) = (0.7, 0.83);
        let noise = NoiseModel::uniform(eta, v).unwrap();
        let state = werner(v).unwrap();
        let alice = AnalyzerModel::lossy(eta);
        let bob = AnalyzerModel::ideal();
        for s in Setting::ALL {
            let d = honest_distribution(&noise, s);
            let (ap, bp) = (alice.effects(s), bob.effects(s));
            for (bo, be) in [(Plus, bp.plus), (Minus, bp.minus)] {
                assert_abs_diff_eq!(d.get(Plus, bo), state.expectation(&ap.plus, &be), epsilon = 1e-12);
                assert_abs_diff_eq!(d.get(Minus, bo), state.expectation(&ap.minus, &be), epsilon = 1e-12);
                assert_abs_diff_eq!(
                    d.get(Zero, bo),
                    state.expectation(&ap.inconclusive(), &be),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn predicted_s_examples() {
        assert_eq!(predicted_s(&NoiseModel::uniform(1.0, 1.0).unwrap()), 3.0);
        let s = predicted_s(&NoiseModel::uniform(0.383, 0.9556).unwrap());
        assert_abs_diff_eq!(s, 1.049, epsilon = 5e-4);
        assert_abs_diff_eq!(predicted_s(&NoiseModel::uniform(1.0 / 3.0, 1.0).unwrap()), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bob_marginal_is_uniform_and_table_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let noise = NoiseModel::new(
                rng.gen(),
                rng.gen(),
                PerSetting::from_fn(|_| rng.gen()),
            )
            .unwrap();
            for s in Setting::ALL {
                let d = honest_distribution(&noise, s);
                assert_abs_diff_eq!(d.total(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(d.bob_marginal(Plus), 0.5, epsilon = 1e-12);
                assert!(d.p.iter().flatten().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn invalid_noise_is_rejected() {
        assert!(NoiseModel::uniform(1.2, 0.5).is_err());
        assert!(NoiseModel::uniform(0.5, -0.1).is_err());
    }

    #[test]
    fn sampling_matches_perfect_anticorrelation() {
        let noise = NoiseModel::uniform(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let anti = (0..n)
            .filter(|_| {
                let (a, b) = sample_honest_trial(&noise, Setting::X, &mut rng);
                a.value() == -b.value()
            })
            .count();
        assert!(((anti as f64 / n as f64) - 1.0).abs() <= 0.005);
    }

    #[test]
    fn zero_efficiency_gives_only_inconclusive() {
        let noise = NoiseModel::uniform(0.0, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in Setting::ALL {
            for _ in 0..1000 {
                assert_eq!(sample_honest_trial(&noise, s, &mut rng).0, Zero);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let noise = NoiseModel::reported();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000)
                .map(|i| sample_honest_trial(&noise, Setting::ALL[i % 3], &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn sampled_frequencies_converge_to_distribution() {
        let noise = NoiseModel::reported();
        let sampler = HonestSampler::new(&noise);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 200_000usize;
        for s in Setting::ALL {
            let mut counts = [[0usize; 2]; 3];
            for _ in 0..n {
                let (a, b) = sampler.sample(s, &mut rng);
                counts[a.index()][b.index()] += 1;
            }
            let d = honest_distribution(&noise, s);
            for a in 0..3 {
                for b in 0..2 {
                    let p = d.p[a][b];
                    let sigma = (p * (1.0 - p) / n as f64).sqrt();
                    let f = counts[a][b] as f64 / n as f64;
                    assert!((f - p).abs() <= 5.0 * sigma + 1e-12, "{s} {a} {b}: {f} vs {p}");
                }
            }
        }
    }

    #[test]
    fn lhs_single_member_examples() {
        let member = |response: Outcome| LhsMember {
            weight: 1.0,
            state: QubitState::new([0.0, 0.0, 1.0]).unwrap(),
            response: PerSetting::splat(response),
        };
        let e = LhsEnsemble::new(vec![member(Plus)]).unwrap();
        let a = AnalyzerModel::ideal();
        let z = lhs_distribution(&e, &a, Setting::Z).unwrap();
        assert_eq!(z.get(Plus, Plus), 1.0);
        let x = lhs_distribution(&e, &a, Setting::X).unwrap();
        assert_abs_diff_eq!(x.get(Plus, Plus), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(x.get(Plus, Minus), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn lhs_ensemble_validation() {
        assert!(matches!(LhsEnsemble::new(vec![]), Err(Error::InvalidArgument(_))));
        let mut m = LhsEnsemble::optimal().members()[0];
        m.weight = 0.5;
        assert!(LhsEnsemble::new(vec![m]).is_err());
        let e: LhsEnsemble =
            serde_json::from_str(&serde_json::to_string(&LhsEnsemble::optimal()).unwrap()).unwrap();
        assert_eq!(e, LhsEnsemble::optimal());
    }

    #[test]
    fn lhs_sampler_matches_distribution() {
        let e = LhsEnsemble::optimal();
        let a = AnalyzerModel::lossy(0.8);
        let sampler = LhsSampler::new(&e, &a);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000usize;
        let d = lhs_distribution(&e, &a, Setting::Y).unwrap();
        let mut counts = [[0usize; 2]; 3];
        for _ in 0..n {
            let (x, y) = sampler.sample(Setting::Y, &mut rng);
            counts[x.index()][y.index()] += 1;
        }
        for i in 0..3 {
            for j in 0..2 {
                let p = d.p[i][j];
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                assert!((counts[i][j] as f64 / n as f64 - p).abs() <= 5.0 * sigma + 1e-12);
            }
        }
    }
}
