use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A US dollar amount held as integer cents.
///
/// Serialized as a JSON number of dollars (`1250` cents → `12.5`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    /// Rounds to the nearest cent, halves away from zero. `None` for non-finite
    /// or out-of-range input.
    pub fn from_dollars(dollars: f64) -> Option<Cents> {
        let c = (dollars * 100.0).round();
        if c.is_finite() && c.abs() < i64::MAX as f64 {
            Some(Cents(c as i64))
        } else {
            None
        }
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    /// Midpoint of two amounts, rounded half up to whole cents.
    pub fn midpoint(self, other: Cents) -> Cents {
        Cents((self.0 + other.0).div_euclid(2) + (self.0 + other.0).rem_euclid(2))
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        Cents(iter.map(|c| c.0).sum())
    }
}

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Cents {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.dollars())
    }
}

impl<'de> Deserialize<'de> for Cents {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Cents::from_dollars(v).ok_or_else(|| serde::de::Error::custom("amount out of range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dollars_round_trip_and_display() {
        assert_eq!(Cents::from_dollars(14.30), Some(Cents(1430)));
        assert_eq!(Cents::from_dollars(0.125), Some(Cents(13)));
        assert_eq!(Cents::from_dollars(f64::NAN), None);
        assert_eq!(Cents(1250).to_string(), "12.50");
        assert_eq!(Cents(-500).to_string(), "-5.00");
        assert_eq!(Cents(7).to_string(), "0.07");
        assert_eq!(serde_json::to_string(&Cents(1250)).unwrap(), "12.5");
        assert_eq!(serde_json::from_str::<Cents>("14.3").unwrap(), Cents(1430));
    }

    #[test]
    fn midpoint_rounds_half_up() {
        assert_eq!(Cents(1000).midpoint(Cents(1400)), Cents(1200));
        assert_eq!(Cents(900).midpoint(Cents(900)), Cents(900));
        assert_eq!(Cents(1001).midpoint(Cents(1002)), Cents(1002));
    }
}
