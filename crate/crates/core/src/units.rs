//! Fixed-point quantities used for everything that is settled.
//!
//! Prices are stored in hundredths of a cent per kWh, energies in watt-hours
//! and money in the product unit (1e-5 cent). All three are plain `i64`
//! newtypes so that settlement arithmetic is exact.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Price in hundredths of a cent per kWh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Price(pub i64);

/// Energy in watt-hours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Energy(pub i64);

/// Money in units of 1e-5 cent, i.e. one `Price` unit times one `Energy` unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Money(pub i64);

impl Price {
    pub const ZERO: Price = Price(0);
    pub const UNITS_PER_CENT: i64 = 100;

    /// Nearest representable price to `cents` c/kWh.
    pub fn from_cents(cents: f64) -> Price {
        Price((cents * Self::UNITS_PER_CENT as f64).round() as i64)
    }

    /// Largest representable price not above `cents`.
    pub fn floor_cents(cents: f64) -> Price {
        Price((cents * Self::UNITS_PER_CENT as f64 + 1e-9).floor() as i64)
    }

    /// Smallest representable price not below `cents`.
    pub fn ceil_cents(cents: f64) -> Price {
        Price((cents * Self::UNITS_PER_CENT as f64 - 1e-9).ceil() as i64)
    }

    pub fn cents(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_CENT as f64
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_fixed(f, self.0, 2)
    }
}

impl Energy {
    pub const ZERO: Energy = Energy(0);
    pub const WH_PER_KWH: i64 = 1000;

    pub fn from_kwh(kwh: f64) -> Energy {
        Energy((kwh * Self::WH_PER_KWH as f64).round() as i64)
    }

    pub fn kwh(self) -> f64 {
        self.0 as f64 / Self::WH_PER_KWH as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn min(self, other: Energy) -> Energy {
        Energy(self.0.min(other.0))
    }

    pub fn max(self, other: Energy) -> Energy {
        Energy(self.0.max(other.0))
    }

    pub fn abs(self) -> Energy {
        Energy(self.0.abs())
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_fixed(f, self.0, 3)
    }
}

impl Money {
    pub const ZERO: Money = Money(0);
    pub const UNITS_PER_CENT: i64 = Price::UNITS_PER_CENT * Energy::WH_PER_KWH;

    pub fn cents(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_CENT as f64
    }

    pub fn dollars(self) -> f64 {
        self.cents() / 100.0
    }

    /// Whole cents, rounding half away from zero.
    pub fn round_cents(self) -> i64 {
        let q = self.0.abs() * 2 + Self::UNITS_PER_CENT;
        let r = q / (2 * Self::UNITS_PER_CENT);
        if self.0 < 0 {
            -r
        } else {
            r
        }
    }
}

impl fmt::Display for Money {
    /// Formats as cents with five decimals (the exact value).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_fixed(f, self.0, 5)
    }
}

fn fmt_fixed(f: &mut fmt::Formatter<'_>, value: i64, decimals: u32) -> fmt::Result {
    let scale = 10i64.pow(decimals);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs();
    let scale = scale as u64;
    write!(f, "{sign}{}.{:0width$}", abs / scale, abs % scale, width = decimals as usize)
}

impl Mul<Energy> for Price {
    type Output = Money;

    fn mul(self, rhs: Energy) -> Money {
        Money(self.0 * rhs.0)
    }
}

macro_rules! additive {
    ($t:ident) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, rhs: $t) -> $t {
                $t(self.0 + rhs.0)
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, rhs: $t) -> $t {
                $t(self.0 - rhs.0)
            }
        }
        impl AddAssign for $t {
            fn add_assign(&mut self, rhs: $t) {
                self.0 += rhs.0;
            }
        }
        impl SubAssign for $t {
            fn sub_assign(&mut self, rhs: $t) {
                self.0 -= rhs.0;
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                $t(-self.0)
            }
        }
        impl Sum for $t {
            fn sum<I: Iterator<Item = $t>>(iter: I) -> $t {
                $t(iter.map(|x| x.0).sum())
            }
        }
    };
}

additive!(Price);
additive!(Energy);
additive!(Money);
