//! Measurement settings, ternary outcomes, and per-setting containers.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// One of the three mutually unbiased polarization bases.
///
/// `X` is the ±45° basis, `Y` the R/L basis and `Z` the H/V basis. The `+1`
/// outcome belongs to the first listed polarization (+45°, R, H), which is the
/// `+1` eigenvector of the Pauli operator on the same axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    X,
    Y,
    Z,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::X, Setting::Y, Setting::Z];

    /// Order used by the experimental results table: H/V, ±45°, R/L.
    pub const TABLE_ORDER: [Setting; 3] = [Setting::Z, Setting::X, Setting::Y];

    /// Pauli axis index (x = 0, y = 1, z = 2).
    pub const fn index(self) -> usize {
        match self {
            Setting::X => 0,
            Setting::Y => 1,
            Setting::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Setting> {
        Setting::ALL.get(i).copied()
    }

    pub const fn name(self) -> &'static str {
        match self {
            Setting::X => "X",
            Setting::Y => "Y",
            Setting::Z => "Z",
        }
    }

    pub const fn basis_label(self) -> &'static str {
        match self {
            Setting::X => "+/- basis",
            Setting::Y => "R/L basis",
            Setting::Z => "H/V basis",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "X" | "x" => Ok(Setting::X),
            "Y" | "y" => Ok(Setting::Y),
            "Z" | "z" => Ok(Setting::Z),
            other => Err(Error::InvalidArgument(format!("unknown setting {other:?}"))),
        }
    }
}

/// A ternary measurement result. `Inconclusive` is the no-detection outcome 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Plus,
    Minus,
    Inconclusive,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Plus, Outcome::Minus, Outcome::Inconclusive];
    pub const CONCLUSIVE: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    pub const fn value(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
            Outcome::Inconclusive => 0,
        }
    }

    /// Table index: +1 → 0, −1 → 1, 0 → 2.
    pub const fn index(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
            Outcome::Inconclusive => 2,
        }
    }

    pub fn from_value(v: i64) -> Option<Outcome> {
        match v {
            1 => Some(Outcome::Plus),
            -1 => Some(Outcome::Minus),
            0 => Some(Outcome::Inconclusive),
            _ => None,
        }
    }

    pub const fn is_conclusive(self) -> bool {
        !matches!(self, Outcome::Inconclusive)
    }

    pub const fn sign(self) -> f64 {
        self.value() as f64
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Plus => f.write_str("+1"),
            Outcome::Minus => f.write_str("-1"),
            Outcome::Inconclusive => f.write_str("0"),
        }
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "+1" | "1" | "+" => Ok(Outcome::Plus),
            "-1" | "-" => Ok(Outcome::Minus),
            "0" | "none" => Ok(Outcome::Inconclusive),
            other => Err(Error::InvalidArgument(format!("unknown outcome {other:?}"))),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Outcome::from_value(v)
            .ok_or_else(|| serde::de::Error::custom(format!("outcome must be +1, -1 or 0, got {v}")))
    }
}

/// One value per setting, serialized as `{"X": .., "Y": .., "Z": ..}`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PerSetting<T> {
    #[serde(rename = "X")]
    pub x: T,
    #[serde(rename = "Y")]
    pub y: T,
    #[serde(rename = "Z")]
    pub z: T,
}

impl<T> PerSetting<T> {
    pub fn from_fn(mut f: impl FnMut(Setting) -> T) -> Self {
        PerSetting {
            x: f(Setting::X),
            y: f(Setting::Y),
            z: f(Setting::Z),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Setting, &T) -> U) -> PerSetting<U> {
        PerSetting {
            x: f(Setting::X, &self.x),
            y: f(Setting::Y, &self.y),
            z: f(Setting::Z, &self.z),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Setting, &T)> {
        [(Setting::X, &self.x), (Setting::Y, &self.y), (Setting::Z, &self.z)].into_iter()
    }
}

impl<T: Clone> PerSetting<T> {
    pub fn splat(v: T) -> Self {
        PerSetting {
            x: v.clone(),
            y: v.clone(),
            z: v,
        }
    }
}

impl<T> Index<Setting> for PerSetting<T> {
    type Output = T;
    fn index(&self, s: Setting) -> &T {
        match s {
            Setting::X => &self.x,
            Setting::Y => &self.y,
            Setting::Z => &self.z,
        }
    }
}

impl<T> IndexMut<Setting> for PerSetting<T> {
    fn index_mut(&mut self, s: Setting) -> &mut T {
        match s {
            Setting::X => &mut self.x,
            Setting::Y => &mut self.y,
            Setting::Z => &mut self.z,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_round_trips_through_text_and_json() {
        for o in Outcome::ALL {
            assert_eq!(o.to_string().parse::<Outcome>().unwrap(), o);
            let j = serde_json::to_string(&o).unwrap();
            assert_eq!(serde_json::from_str::<Outcome>(&j).unwrap(), o);
        }
        assert!(serde_json::from_str::<Outcome>("2").is_err());
    }

    #[test]
    fn per_setting_json_uses_setting_names() {
        let p = PerSetting { x: 1, y: 2, z: 3 };
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"X":1,"Y":2,"Z":3}"#);
        assert_eq!(p[Setting::Y], 2);
    }
}
