//! Bob's polarization analyzer: a pair of effects per setting, with loss
//! absorbed by the implicit inconclusive effect `I − E₊ − E₋`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{Operator2, C64, PSD_TOL};
use crate::setting::{PerSetting, Setting};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectPair {
    pub plus: Operator2,
    pub minus: Operator2,
}

impl EffectPair {
    /// Projective measurement along `axis` with detection efficiency `eta`.
    pub fn ideal(setting: Setting, eta: f64) -> Self {
        let mut e = [0.0; 3];
        e[setting.index()] = 0.5 * eta;
        let minus_e = [-e[0], -e[1], -e[2]];
        EffectPair {
            plus: Operator2::from_pauli(0.5 * eta, e),
            minus: Operator2::from_pauli(0.5 * eta, minus_e),
        }
    }

    pub fn inconclusive(&self) -> Operator2 {
        Operator2::identity() - self.plus - self.minus
    }

    pub fn validate(&self) -> Result<()> {
        self.plus.validate_effect()?;
        self.minus.validate_effect()?;
        let rest = self.inconclusive();
        if !rest.is_hermitian(1e-12) || rest.eigenvalues()[0] < -PSD_TOL {
            return Err(Error::InvalidEffect(format!(
                "E+ + E- exceeds the identity (remainder eigenvalues {:?})",
                rest.eigenvalues()
            )));
        }
        Ok(())
    }

    /// `(tr(E₊ρ), tr(E₋ρ))` for the state with Bloch vector `b`.
    ///
    /// Uses the Pauli form `tr((a I + e·σ)(I + b·σ)/2) = a + e·b`.
    pub fn probabilities(&self, b: [f64; 3]) -> (f64, f64) {
        let (ap, ep) = self.plus.pauli_components();
        let (am, em) = self.minus.pauli_components();
        let p = ap + ep[0] * b[0] + ep[1] * b[1] + ep[2] * b[2];
        let m = am + em[0] * b[0] + em[1] * b[1] + em[2] * b[2];
        (p.max(0.0), m.max(0.0))
    }

    /// Bob's mean outcome conditioned on a conclusive result, 0 if he can
    /// never be conclusive on this state.
    pub fn conditional_mean(&self, b: [f64; 3]) -> f64 {
        let (p, m) = self.probabilities(b);
        let total = p + m;
        if total <= 0.0 {
            0.0
        } else {
            (p - m) / total
        }
    }

    /// `U E U†` for both effects.
    pub fn conjugate(&self, u: &Operator2) -> Self {
        let ud = u.adjoint();
        EffectPair {
            plus: *u * self.plus * ud,
            minus: *u * self.minus * ud,
        }
    }
}

/// Effects for all three settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PerSetting<EffectPair>", into = "PerSetting<EffectPair>")]
pub struct AnalyzerModel {
    effects: PerSetting<EffectPair>,
}

impl AnalyzerModel {
    pub fn new(effects: PerSetting<EffectPair>) -> Result<Self> {
        for (s, pair) in effects.iter() {
            pair.validate()
                .map_err(|e| Error::InvalidEffect(format!("setting {s}: {e}")))?;
        }
        Ok(AnalyzerModel { effects })
    }

    /// Lossless projective measurements in the three mutually unbiased bases.
    pub fn ideal() -> Self {
        Self::lossy(1.0)
    }

    /// Ideal bases with a common detection efficiency.
    pub fn lossy(eta: f64) -> Self {
        AnalyzerModel {
            effects: PerSetting::from_fn(|s| EffectPair::ideal(s, eta)),
        }
    }

    pub fn effects(&self, s: Setting) -> &EffectPair {
        &self.effects[s]
    }

    pub fn all_effects(&self) -> &PerSetting<EffectPair> {
        &self.effects
    }

    /// Conjugates all six effects by the same unitary, `E ↦ U E U†`.
    pub fn conjugated(&self, u: &Operator2) -> Self {
        AnalyzerModel {
            effects: self.effects.map(|_, p| p.conjugate(u)),
        }
    }
}

impl TryFrom<PerSetting<EffectPair>> for AnalyzerModel {
    type Error = Error;
    fn try_from(p: PerSetting<EffectPair>) -> Result<Self> {
        AnalyzerModel::new(p)
    }
}

impl From<AnalyzerModel> for PerSetting<EffectPair> {
    fn from(a: AnalyzerModel) -> Self {
        a.effects
    }
}

/// `exp(−i θ n·σ / 2)`, the SU(2) rotation by `θ` about unit axis `n`.
pub fn rotation(axis: [f64; 3], angle: f64) -> Operator2 {
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    let [nx, ny, nz] = axis;
    Operator2::from_rows([
        [C64::new(c, -s * nz), C64::new(-s * ny, -s * nx)],
        [C64::new(s * ny, -s * nx), C64::new(c, s * nz)],
    ])
}

/// Rotates a Bloch vector by `angle` about unit `axis` (Rodrigues).
pub fn rotate_bloch(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (c, s) = (angle.cos(), angle.sin());
    let k = axis;
    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let cross = [
        k[1] * v[2] - k[2] * v[1],
        k[2] * v[0] - k[0] * v[2],
        k[0] * v[1] - k[1] * v[0],
    ];
    std::array::from_fn(|i| v[i] * c + cross[i] * s + k[i] * kv * (1.0 - c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{bloch_to_density, density_to_bloch};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ideal_effects_are_mub_projectors() {
        let a = AnalyzerModel::ideal();
        for s in Setting::ALL {
            let pair = a.effects(s);
            let mut b = [0.0; 3];
            b[s.index()] = 1.0;
            assert_eq!(pair.probabilities(b), (1.0, 0.0));
            assert_abs_diff_eq!(pair.inconclusive().trace().re, 0.0);
        }
    }

    #[test]
    fn overfull_pair_is_rejected() {
        let mut p = PerSetting::from_fn(|s| EffectPair::ideal(s, 1.0));
        p.z.minus = Operator2::identity().scale(0.5);
        assert!(matches!(AnalyzerModel::new(p), Err(Error::InvalidEffect(_))));
    }

    #[test]
    fn rotation_matches_bloch_rotation() {
        let axis = [0.0, 0.6, 0.8];
        let u = rotation(axis, 0.7);
        let b = [0.3, -0.2, 0.5];
        let rho = bloch_to_density(b).unwrap();
        let rotated = density_to_bloch(&(u * rho * u.adjoint()));
        let expected = rotate_bloch(b, axis, 0.7);
        for k in 0..3 {
            assert_abs_diff_eq!(rotated[k], expected[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn analyzer_json_round_trip() {
        let a = AnalyzerModel::lossy(0.6);
        let j = serde_json::to_string(&a).unwrap();
        assert!(j.starts_with(r#"{"X":{"plus":"#));
        let back: AnalyzerModel = serde_json::from_str(&j).unwrap();
        assert_eq!(back, a);
    }
}
