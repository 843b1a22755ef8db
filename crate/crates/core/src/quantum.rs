//! One- and two-qubit linear algebra: operators, Bloch vectors, the singlet and
//! Werner states, and Born-rule probabilities.
//!
//! Every 2×2 Hermitian operator is handled through its Pauli decomposition
//! `a I + e·σ`, which gives closed-form eigenvalues `a ± |e|` and spectral
//! projectors `(I ± ê·σ)/2`. The 4×4 states use nalgebra's Hermitian
//! eigensolver for the positivity check only.

use std::fmt;

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for algebraic identities (hermiticity, trace, Bloch norm).
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for positivity after floating-point eigensolves.
pub const PSD_TOL: f64 = 1e-10;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// A 2×2 complex matrix. Used for single-qubit density operators, observables
/// and measurement effects.
#[derive(Clone, Copy, PartialEq)]
pub struct Operator2(Matrix2<C64>);

impl fmt::Debug for Operator2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "Operator2[[{}, {}], [{}, {}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(1, 0)],
            m[(1, 1)]
        )
    }
}

impl Operator2 {
    pub fn from_rows(rows: [[C64; 2]; 2]) -> Self {
        Operator2(Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1]))
    }

    pub fn identity() -> Self {
        Operator2(Matrix2::identity())
    }

    pub fn zero() -> Self {
        Operator2(Matrix2::zeros())
    }

    /// Pauli matrix for axis 0 (x), 1 (y) or 2 (z).
    pub fn pauli(axis: usize) -> Self {
        match axis {
            0 => Self::from_rows([[ZERO, ONE], [ONE, ZERO]]),
            1 => Self::from_rows([[ZERO, -I], [I, ZERO]]),
            2 => Self::from_rows([[ONE, ZERO], [ZERO, -ONE]]),
            _ => panic!("pauli axis out of range: {axis}"),
        }
    }

    /// Builds `a I + e·σ`.
    pub fn from_pauli(a: f64, e: [f64; 3]) -> Self {
        Self::from_rows([
            [C64::new(a + e[2], 0.0), C64::new(e[0], -e[1])],
            [C64::new(e[0], e[1]), C64::new(a - e[2], 0.0)],
        ])
    }

    /// Rank-one projector onto a (not necessarily normalized) ket.
    pub fn projector(ket: [C64; 2]) -> Self {
        let norm = ket[0].norm_sqr() + ket[1].norm_sqr();
        let m = Matrix2::new(
            ket[0] * ket[0].conj(),
            ket[0] * ket[1].conj(),
            ket[1] * ket[0].conj(),
            ket[1] * ket[1].conj(),
        );
        Operator2(m / C64::new(norm, 0.0))
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn rows(&self) -> [[C64; 2]; 2] {
        [
            [self.0[(0, 0)], self.0[(0, 1)]],
            [self.0[(1, 0)], self.0[(1, 1)]],
        ]
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn adjoint(&self) -> Self {
        Operator2(self.0.adjoint())
    }

    pub fn scale(&self, s: f64) -> Self {
        Operator2(self.0 * C64::new(s, 0.0))
    }

    /// Real Pauli coefficients `(a, e)` of the Hermitian part, `M ≈ a I + e·σ`.
    pub fn pauli_components(&self) -> (f64, [f64; 3]) {
        let m = &self.0;
        let a = 0.5 * (m[(0, 0)].re + m[(1, 1)].re);
        let ex = 0.5 * (m[(0, 1)].re + m[(1, 0)].re);
        let ey = 0.5 * (m[(1, 0)].im - m[(0, 1)].im);
        let ez = 0.5 * (m[(0, 0)].re - m[(1, 1)].re);
        (a, [ex, ey, ez])
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let m = &self.0;
        (0..2).all(|i| (0..2).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() <= tol))
    }

    /// Eigenvalues of the Hermitian part in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let (a, e) = self.pauli_components();
        let r = norm3(e);
        [a - r, a + r]
    }

    /// Applies a real function to the spectrum of the Hermitian part.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Self {
        let (a, e) = self.pauli_components();
        let r = norm3(e);
        if r == 0.0 {
            return Self::identity().scale(f(a));
        }
        let hi = f(a + r);
        let lo = f(a - r);
        let n = [e[0] / r, e[1] / r, e[2] / r];
        // hi (I + n·σ)/2 + lo (I - n·σ)/2
        let mean = 0.5 * (hi + lo);
        let half = 0.5 * (hi - lo);
        Self::from_pauli(mean, [half * n[0], half * n[1], half * n[2]])
    }

    /// Principal square root of a PSD operator; negative eigenvalues are clipped.
    pub fn sqrt_psd(&self) -> Self {
        self.map_spectrum(|x| x.max(0.0).sqrt())
    }

    /// Inverse square root of a positive definite operator.
    pub fn inv_sqrt(&self) -> Self {
        self.map_spectrum(|x| 1.0 / x.sqrt())
    }

    /// Hermitian part with eigenvalues clipped to be nonnegative.
    pub fn clip_negative(&self) -> Self {
        self.map_spectrum(|x| x.max(0.0))
    }

    /// Checks `0 ≤ E ≤ I` (within `PSD_TOL`) and hermiticity.
    pub fn is_effect(&self) -> bool {
        if !self.is_hermitian(ALGEBRAIC_TOL) {
            return false;
        }
        let [lo, hi] = self.eigenvalues();
        lo >= -PSD_TOL && hi <= 1.0 + PSD_TOL
    }

    pub fn validate_effect(&self) -> Result<()> {
        if self.is_effect() {
            Ok(())
        } else {
            Err(Error::InvalidEffect(format!(
                "{self:?} is not an effect (eigenvalues {:?})",
                self.eigenvalues()
            )))
        }
    }

    /// Trace distance `½‖A − B‖₁` between Hermitian operators.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let [lo, hi] = (*self - *other).eigenvalues();
        0.5 * (lo.abs() + hi.abs())
    }

    /// Real part of `tr(self · other)`.
    pub fn trace_product(&self, other: &Self) -> f64 {
        (self.0 * other.0).trace().re
    }
}

impl std::ops::Add for Operator2 {
    type Output = Operator2;
    fn add(self, rhs: Self) -> Self {
        Operator2(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Operator2 {
    type Output = Operator2;
    fn sub(self, rhs: Self) -> Self {
        Operator2(self.0 - rhs.0)
    }
}

impl std::ops::Mul for Operator2 {
    type Output = Operator2;
    fn mul(self, rhs: Self) -> Self {
        Operator2(self.0 * rhs.0)
    }
}

impl Serialize for Operator2 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: [[[f64; 2]; 2]; 2] =
            std::array::from_fn(|i| std::array::from_fn(|j| [self.0[(i, j)].re, self.0[(i, j)].im]));
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator2 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[[f64; 2]; 2]; 2]>::deserialize(d)?;
        Ok(Self::from_rows(std::array::from_fn(|i| {
            std::array::from_fn(|j| C64::new(rows[i][j][0], rows[i][j][1]))
        })))
    }
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A single-qubit state given by its Bloch vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct QubitState {
    bloch: [f64; 3],
}

impl QubitState {
    pub fn new(bloch: [f64; 3]) -> Result<Self> {
        let n = norm3(bloch);
        if !n.is_finite() || n > 1.0 + ALGEBRAIC_TOL {
            return Err(Error::InvalidState(format!(
                "Bloch vector {bloch:?} has norm {n} > 1"
            )));
        }
        Ok(QubitState { bloch })
    }

    pub fn maximally_mixed() -> Self {
        QubitState { bloch: [0.0; 3] }
    }

    pub fn bloch(&self) -> [f64; 3] {
        self.bloch
    }

    pub fn is_pure(&self) -> bool {
        (norm3(self.bloch) - 1.0).abs() <= ALGEBRAIC_TOL
    }

    pub fn density(&self) -> Operator2 {
        let b = self.bloch;
        Operator2::from_pauli(0.5, [0.5 * b[0], 0.5 * b[1], 0.5 * b[2]])
    }

    /// Expectation of the Pauli observable along `axis`.
    pub fn expectation(&self, axis: usize) -> f64 {
        self.bloch[axis]
    }
}

impl TryFrom<[f64; 3]> for QubitState {
    type Error = Error;
    fn try_from(b: [f64; 3]) -> Result<Self> {
        QubitState::new(b)
    }
}

impl From<QubitState> for [f64; 3] {
    fn from(s: QubitState) -> Self {
        s.bloch
    }
}

/// `(I + b·σ)/2`.
pub fn bloch_to_density(b: [f64; 3]) -> Result<Operator2> {
    Ok(QubitState::new(b)?.density())
}

/// Inverse of [`bloch_to_density`]: `b_i = tr(σ_i ρ)`.
pub fn density_to_bloch(rho: &Operator2) -> [f64; 3] {
    let (_, e) = rho.pauli_components();
    [2.0 * e[0], 2.0 * e[1], 2.0 * e[2]]
}

fn validate_density(rho: &Operator2) -> Result<()> {
    if !rho.is_hermitian(ALGEBRAIC_TOL) {
        return Err(Error::InvalidState(format!("{rho:?} is not Hermitian")));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > ALGEBRAIC_TOL || tr.im.abs() > ALGEBRAIC_TOL {
        return Err(Error::InvalidState(format!("{rho:?} has trace {tr}")));
    }
    if rho.eigenvalues()[0] < -PSD_TOL {
        return Err(Error::InvalidState(format!("{rho:?} is not positive")));
    }
    Ok(())
}

/// Born rule `tr(E ρ)`, clamped to `[0, 1]`.
pub fn born_probability(state: &Operator2, effect: &Operator2) -> Result<f64> {
    validate_density(state)?;
    effect.validate_effect()?;
    Ok(effect.trace_product(state).clamp(0.0, 1.0))
}

/// Kronecker product `a ⊗ b` (Alice's factor first).
pub fn kron(a: &Operator2, b: &Operator2) -> Matrix4<C64> {
    Matrix4::from_fn(|r, c| a.entry(r / 2, c / 2) * b.entry(r % 2, c % 2))
}

/// A two-qubit density operator, basis order `|00⟩, |01⟩, |10⟩, |11⟩` with
/// Alice's qubit first.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState(Matrix4<C64>);

impl TwoQubitState {
    /// Validates hermiticity, unit trace and positivity.
    pub fn new(rows: [[C64; 4]; 4]) -> Result<Self> {
        let m = Matrix4::from_fn(|r, c| rows[r][c]);
        Self::from_matrix(m)
    }

    pub(crate) fn from_matrix(m: Matrix4<C64>) -> Result<Self> {
        for r in 0..4 {
            for c in 0..4 {
                if (m[(r, c)] - m[(c, r)].conj()).norm() > ALGEBRAIC_TOL {
                    return Err(Error::InvalidState("two-qubit state is not Hermitian".into()));
                }
            }
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > ALGEBRAIC_TOL || tr.im.abs() > ALGEBRAIC_TOL {
            return Err(Error::InvalidState(format!("two-qubit trace is {tr}")));
        }
        let eig = m.symmetric_eigenvalues();
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "two-qubit state has negative eigenvalue {min}"
            )));
        }
        Ok(TwoQubitState(m))
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState(Matrix4::identity() * C64::new(0.25, 0.0))
    }

    /// `(|10⟩ − |01⟩)/√2`.
    pub fn singlet() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = [ZERO, C64::new(-h, 0.0), C64::new(h, 0.0), ZERO];
        TwoQubitState(Matrix4::from_fn(|r, c| psi[r] * psi[c].conj()))
    }

    /// `V·ψ⁻ + (1 − V)·I/4`.
    pub fn werner(visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::InvalidParameter(format!(
                "visibility {visibility} outside [0, 1]"
            )));
        }
        let s = Self::singlet().0 * C64::new(visibility, 0.0);
        let mixed = Matrix4::identity() * C64::new(0.25 * (1.0 - visibility), 0.0);
        Ok(TwoQubitState(s + mixed))
    }

    /// `Re tr((A ⊗ B) ρ)`.
    pub fn expectation(&self, alice: &Operator2, bob: &Operator2) -> f64 {
        (kron(alice, bob) * self.0).trace().re
    }

    /// Alice's reduced state `tr_B ρ`.
    pub fn alice_marginal(&self) -> Operator2 {
        let m = &self.0;
        Operator2::from_rows(std::array::from_fn(|i| {
            std::array::from_fn(|j| m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)])
        }))
    }

    /// Bob's reduced state `tr_A ρ`.
    pub fn bob_marginal(&self) -> Operator2 {
        partial_trace_alice(&self.0)
    }
}

fn partial_trace_alice(m: &Matrix4<C64>) -> Operator2 {
    Operator2::from_rows(std::array::from_fn(|i| {
        std::array::from_fn(|j| m[(i, j)] + m[(2 + i, 2 + j)])
    }))
}

pub fn singlet() -> TwoQubitState {
    TwoQubitState::singlet()
}

pub fn werner(visibility: f64) -> Result<TwoQubitState> {
    TwoQubitState::werner(visibility)
}

/// Probability of Alice's effect and Bob's normalized conditional state.
///
/// Below a probability of 1e-15 the conditional state is undefined and the
/// maximally mixed state is returned with probability 0.
pub fn conditional_state(
    joint: &TwoQubitState,
    alice_effect: &Operator2,
) -> Result<(f64, QubitState)> {
    alice_effect.validate_effect()?;
    let weighted = kron(alice_effect, &Operator2::identity()) * joint.0;
    let bob = partial_trace_alice(&weighted);
    let p = bob.trace().re;
    if p < 1e-15 {
        return Ok((0.0, QubitState::maximally_mixed()));
    }
    let b = density_to_bloch(&bob.scale(1.0 / p));
    // Clamp roundoff that can push a pure conditional state just past the sphere.
    let n = norm3(b);
    let b = if n > 1.0 { [b[0] / n, b[1] / n, b[2] / n] } else { b };
    Ok((p, QubitState::new(b)?))
}

impl Serialize for TwoQubitState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|i| (0..4).map(|j| [self.0[(i, j)].re, self.0[(i, j)].im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TwoQubitState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[[f64; 2]; 4]; 4]>::deserialize(d)?;
        TwoQubitState::new(std::array::from_fn(|i| {
            std::array::from_fn(|j| C64::new(rows[i][j][0], rows[i][j][1]))
        }))
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H_KET: [C64; 2] = [ONE, ZERO];

    fn ket_plus45() -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        [C64::new(h, 0.0), C64::new(h, 0.0)]
    }

    fn ket_r() -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        [C64::new(h, 0.0), C64::new(0.0, h)]
    }

    fn assert_op_eq(a: &Operator2, b: &Operator2, tol: f64) {
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (a.entry(i, j) - b.entry(i, j)).norm() <= tol,
                    "{a:?} != {b:?}"
                );
            }
        }
    }

    #[test]
    fn bloch_origin_is_maximally_mixed() {
        let rho = bloch_to_density([0.0, 0.0, 0.0]).unwrap();
        assert_op_eq(&rho, &Operator2::identity().scale(0.5), 1e-15);
    }

    #[test]
    fn bloch_north_pole_is_h_projector() {
        let rho = bloch_to_density([0.0, 0.0, 1.0]).unwrap();
        assert_op_eq(&rho, &Operator2::projector(H_KET), 1e-15);
    }

    #[test]
    fn equatorial_pure_state_is_idempotent() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let rho = bloch_to_density([h, h, 0.0]).unwrap();
        assert_op_eq(&(rho * rho), &rho, 1e-12);
        let [lo, hi] = rho.eigenvalues();
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bloch_outside_ball_is_rejected() {
        assert!(matches!(
            bloch_to_density([1.0, 0.1, 0.0]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn born_rule_examples() {
        let h = Operator2::projector(H_KET);
        assert_abs_diff_eq!(born_probability(&h, &h).unwrap(), 1.0, epsilon = 1e-15);

        let mixed = Operator2::identity().scale(0.5);
        let lossy = h.scale(0.6);
        assert_abs_diff_eq!(born_probability(&mixed, &lossy).unwrap(), 0.3, epsilon = 1e-15);

        // |⟨+45|R⟩|² by direct amplitude arithmetic.
        let (p, r) = (ket_plus45(), ket_r());
        let amp = p[0].conj() * r[0] + p[1].conj() * r[1];
        let brute = amp.norm_sqr();
        assert_abs_diff_eq!(brute, 0.5, epsilon = 1e-15);
        let got =
            born_probability(&Operator2::projector(p), &Operator2::projector(r)).unwrap();
        assert_abs_diff_eq!(got, brute, epsilon = 1e-12);
    }

    #[test]
    fn born_rule_rejects_non_effect() {
        let h = Operator2::projector(H_KET);
        let too_big = Operator2::identity().scale(1.5);
        assert!(matches!(
            born_probability(&h, &too_big),
            Err(Error::InvalidEffect(_))
        ));
        let negative = Operator2::pauli(2);
        assert!(born_probability(&h, &negative).is_err());
    }

    #[test]
    fn singlet_properties() {
        let s = singlet();
        assert_op_eq(&s.alice_marginal(), &Operator2::identity().scale(0.5), 1e-15);
        assert_op_eq(&s.bob_marginal(), &Operator2::identity().scale(0.5), 1e-15);
        let z = Operator2::pauli(2);
        assert_abs_diff_eq!(s.expectation(&z, &z), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            s.expectation(&Operator2::pauli(0), &Operator2::pauli(1)),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn singlet_is_anticorrelated_in_every_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = singlet();
        for _ in 0..200 {
            let n = random_unit(&mut rng);
            let obs = Operator2::from_pauli(0.0, n);
            assert_abs_diff_eq!(s.expectation(&obs, &obs), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn werner_limits_and_correlation() {
        assert_eq!(werner(1.0).unwrap(), singlet());
        assert_eq!(werner(0.0).unwrap(), TwoQubitState::maximally_mixed());
        let z = Operator2::pauli(2);
        let w = werner(0.95).unwrap();
        assert_abs_diff_eq!(w.expectation(&z, &z), -0.95, epsilon = 1e-12);
        assert!(matches!(werner(1.01), Err(Error::InvalidParameter(_))));
        assert!(werner(-0.1).is_err());
    }

    #[test]
    fn werner_same_basis_distribution() {
        let v = 0.8;
        let w = werner(v).unwrap();
        for axis in 0..3 {
            for a in [1.0, -1.0] {
                for b in [1.0, -1.0] {
                    let ea = Operator2::from_pauli(0.5, pauli_half(axis, a));
                    let eb = Operator2::from_pauli(0.5, pauli_half(axis, b));
                    let p = w.expectation(&ea, &eb);
                    assert_abs_diff_eq!(p, (1.0 - a * b * v) / 4.0, epsilon = 1e-12);
                }
            }
        }
    }

    fn pauli_half(axis: usize, sign: f64) -> [f64; 3] {
        let mut e = [0.0; 3];
        e[axis] = 0.5 * sign;
        e
    }

    #[test]
    fn conditional_state_examples() {
        let h = Operator2::projector(H_KET);
        let (p, bob) = conditional_state(&singlet(), &h).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(bob.bloch()[2], -1.0, epsilon = 1e-12);

        let v = 0.7;
        let (p, bob) = conditional_state(&werner(v).unwrap(), &h).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(bob.bloch()[2], -v, epsilon = 1e-12);

        let (p, bob) =
            conditional_state(&TwoQubitState::maximally_mixed(), &Operator2::projector(ket_r()))
                .unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
        assert!(norm3(bob.bloch()) < 1e-12);

        let (p, bob) = conditional_state(&singlet(), &Operator2::zero()).unwrap();
        assert_eq!(p, 0.0);
        assert_eq!(bob, QubitState::maximally_mixed());
    }

    #[test]
    fn singlet_conditional_mean_is_perfectly_anticorrelated() {
        let s = singlet();
        for axis in 0..3 {
            let plus = Operator2::from_pauli(0.5, pauli_half(axis, 1.0));
            let (_, bob) = conditional_state(&s, &plus).unwrap();
            assert_abs_diff_eq!(bob.expectation(axis), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_qubit_validation() {
        let mut rows = [[ZERO; 4]; 4];
        rows[0][0] = ONE;
        assert!(TwoQubitState::new(rows).is_ok());
        rows[1][1] = ONE;
        assert!(TwoQubitState::new(rows).is_err());
        rows[0][0] = C64::new(1.5, 0.0);
        rows[1][1] = C64::new(-0.5, 0.0);
        assert!(matches!(TwoQubitState::new(rows), Err(Error::InvalidState(_))));
    }

    #[test]
    fn json_schema_uses_re_im_pairs() {
        let op = Operator2::from_rows([[ONE, C64::new(0.0, -0.5)], [C64::new(0.0, 0.5), ZERO]]);
        let json = serde_json::to_string(&op).unwrap();
        assert_eq!(json, "[[[1.0,0.0],[0.0,-0.5]],[[0.0,0.5],[0.0,0.0]]]");
        let back: Operator2 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, op);
        let s: TwoQubitState =
            serde_json::from_str(&serde_json::to_string(&singlet()).unwrap()).unwrap();
        assert_eq!(s, singlet());
    }

    fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = norm3(v);
            if n > 1e-3 && n <= 1.0 {
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    fn random_ball(rng: &mut impl Rng) -> [f64; 3] {
        loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if norm3(v) <= 1.0 {
                return v;
            }
        }
    }

    #[test]
    fn bloch_round_trip_in_unit_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let b = random_ball(&mut rng);
            let back = density_to_bloch(&bloch_to_density(b).unwrap());
            for k in 0..3 {
                assert_abs_diff_eq!(back[k], b[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pauli_expectations_stay_inside_unit_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let paulis = [Operator2::pauli(0), Operator2::pauli(1), Operator2::pauli(2)];
        for _ in 0..100_000 {
            let rho = QubitState::new(random_ball(&mut rng)).unwrap().density();
            let s: f64 = paulis.iter().map(|p| p.trace_product(&rho).powi(2)).sum();
            assert!(s <= 1.0 + 1e-10, "{s}");
        }
    }

    proptest! {
        #[test]
        fn born_probability_is_affine_in_effect(
            lambda in 0.0f64..=1.0,
            a1 in 0.0f64..0.5, a2 in 0.0f64..0.5,
            e1 in prop::array::uniform3(-0.25f64..0.25),
            e2 in prop::array::uniform3(-0.25f64..0.25),
            b in prop::array::uniform3(-0.57f64..0.57),
        ) {
            // a ≥ |e| keeps both operators inside [0, I].
            let f1 = Operator2::from_pauli(a1.max(norm3(e1)), e1);
            let f2 = Operator2::from_pauli(a2.max(norm3(e2)), e2);
            let rho = bloch_to_density(b).unwrap();
            let mix = f1.scale(lambda) + f2.scale(1.0 - lambda);
            let lhs = born_probability(&rho, &mix).unwrap();
            let rhs = lambda * born_probability(&rho, &f1).unwrap()
                + (1.0 - lambda) * born_probability(&rho, &f2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn map_spectrum_matches_eigen_reconstruction(
            a in -1.0f64..1.0,
            e in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let m = Operator2::from_pauli(a, e);
            let sq = m.map_spectrum(|x| x * x);
            let direct = m * m;
            for i in 0..2 { for j in 0..2 {
                prop_assert!((sq.entry(i, j) - direct.entry(i, j)).norm() < 1e-12);
            }}
        }
    }
}
