//! Duration arithmetic and the mixed-radix `vtick` codec.
//!
//! All tick values use 480 ticks per quarter note, so a whole note is 1920
//! ticks. 1920 = 2^7 · 3 · 5, which is why the vtick code uses the radices
//! `(2,2,2,2,2,2,2,3,5)`.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ticks per quarter note.
pub const DIVISIONS: u32 = 480;
/// Ticks per whole note.
pub const WHOLE: u32 = 1920;
/// Highest division class (256th note).
pub const MAX_DIVISION: u8 = 8;
/// Highest dot count.
pub const MAX_DOTS: u8 = 2;

/// Exact rational tick count.
pub type TickRatio = Ratio<i64>;

/// Radices of the vtick digits, most significant first.
pub const VTICK_RADICES: [u32; 9] = [2, 2, 2, 2, 2, 2, 2, 3, 5];
/// Place value of each vtick digit.
pub const VTICK_PLACES: [u32; 9] = [960, 480, 240, 120, 60, 30, 15, 5, 1];
/// Length of the one-hot vector form (zero state dropped per digit).
pub const VTICK_VECTOR_LEN: usize = 13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimebaseError {
    #[error("division {0} out of range 0..=8")]
    DivisionRange(u8),
    #[error("dots {0} out of range 0..=2")]
    DotsRange(u8),
    #[error("sub-tick duration for division {division} with {dots} dots")]
    SubTickDuration { division: u8, dots: u8 },
    #[error("bad timewarp ratio {numerator}/{denominator}")]
    BadTimeWarp { numerator: u32, denominator: u32 },
    #[error("tick {0} out of vtick range 0..1920")]
    VtickRange(u32),
    #[error("vtick digit {index} = {value} exceeds radix {radix}")]
    VtickDigit { index: usize, value: u8, radix: u32 },
    #[error("vtick vector must have {VTICK_VECTOR_LEN} entries, got {0}")]
    VtickLength(usize),
    #[error("vtick digit block {0} has more than one hot entry")]
    VtickMultiHot(usize),
}

/// A tuplet scaling `numerator / denominator` applied to a base duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWarp {
    #[serde(alias = "num")]
    pub numerator: u32,
    #[serde(alias = "den")]
    pub denominator: u32,
}

impl TimeWarp {
    pub const TRIPLET: TimeWarp = TimeWarp { numerator: 2, denominator: 3 };

    /// Validated constructor; ratios at or below one half are rejected.
    pub fn new(numerator: u32, denominator: u32) -> Result<Self, TimebaseError> {
        let warp = TimeWarp { numerator, denominator };
        warp.validate()?;
        Ok(warp)
    }

    pub fn validate(&self) -> Result<(), TimebaseError> {
        if self.numerator == 0 || self.denominator == 0 || 2 * self.numerator <= self.denominator {
            return Err(TimebaseError::BadTimeWarp { numerator: self.numerator, denominator: self.denominator });
        }
        Ok(())
    }

    pub fn ratio(&self) -> TickRatio {
        Ratio::new(self.numerator as i64, self.denominator as i64)
    }

    /// Only 2/3 counts as a regular tuplet ratio.
    pub fn is_regular(&self) -> bool {
        self.ratio() == Ratio::new(2, 3)
    }
}

impl fmt::Display for TimeWarp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

fn check_range(division: u8, dots: u8) -> Result<(), TimebaseError> {
    if division > MAX_DIVISION {
        return Err(TimebaseError::DivisionRange(division));
    }
    if dots > MAX_DOTS {
        return Err(TimebaseError::DotsRange(dots));
    }
    Ok(())
}

/// `1920 · 2^-division · (2 - 2^-dots)` as an exact rational.
pub fn duration_ratio(division: u8, dots: u8) -> Result<TickRatio, TimebaseError> {
    check_range(division, dots)?;
    // 1920 · (2^(dots+1) - 1) / 2^(division+dots)
    let numer = WHOLE as i64 * ((1i64 << (dots + 1)) - 1);
    let denom = 1i64 << (division + dots);
    Ok(Ratio::new(numer, denom))
}

/// Note duration in whole ticks; errors when the value is fractional.
pub fn duration_ticks(division: u8, dots: u8) -> Result<u32, TimebaseError> {
    let d = duration_ratio(division, dots)?;
    if !d.is_integer() {
        return Err(TimebaseError::SubTickDuration { division, dots });
    }
    Ok(d.to_integer() as u32)
}

/// Scale `base` by a tuplet ratio.
pub fn warp_duration(base: u32, numerator: u32, denominator: u32) -> Result<TickRatio, TimebaseError> {
    let warp = TimeWarp::new(numerator, denominator)?;
    Ok(TickRatio::from_integer(base as i64) * warp.ratio())
}

/// Effective duration of an event with an optional tuplet warp.
pub fn effective_duration(division: u8, dots: u8, warp: Option<TimeWarp>) -> Result<TickRatio, TimebaseError> {
    let base = duration_ratio(division, dots)?;
    Ok(match warp {
        Some(w) => {
            w.validate()?;
            base * w.ratio()
        }
        None => base,
    })
}

/// Round a rational tick value to the nearest integer tick (halves round up).
pub fn round_ticks(value: TickRatio) -> i64 {
    (value + Ratio::new(1, 2)).floor().to_integer()
}

/// Mixed-radix tick code over the base 1920.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VtickCode {
    pub digits: [u8; 9],
}

impl VtickCode {
    /// Build from raw digits, checking each against its radix.
    pub fn from_digits(digits: [u8; 9]) -> Result<Self, TimebaseError> {
        for (index, (&value, &radix)) in digits.iter().zip(VTICK_RADICES.iter()).enumerate() {
            if value as u32 >= radix {
                return Err(TimebaseError::VtickDigit { index, value, radix });
            }
        }
        Ok(VtickCode { digits })
    }

    /// One-hot per digit with the zero state dropped: 7×1 + 1×2 + 1×4 entries.
    pub fn to_vector(&self) -> [f64; VTICK_VECTOR_LEN] {
        let mut out = [0.0; VTICK_VECTOR_LEN];
        let mut offset = 0;
        for (&digit, &radix) in self.digits.iter().zip(VTICK_RADICES.iter()) {
            if digit > 0 {
                out[offset + digit as usize - 1] = 1.0;
            }
            offset += radix as usize - 1;
        }
        out
    }

    /// Decode a (possibly soft) vector: per block argmax, all entries below
    /// 0.5 meaning digit zero. More than one entry at or above 0.5 in a block
    /// is malformed.
    pub fn from_vector(vector: &[f64]) -> Result<Self, TimebaseError> {
        if vector.len() != VTICK_VECTOR_LEN {
            return Err(TimebaseError::VtickLength(vector.len()));
        }
        let mut digits = [0u8; 9];
        let mut offset = 0;
        for (block, &radix) in VTICK_RADICES.iter().enumerate() {
            let width = radix as usize - 1;
            let slice = &vector[offset..offset + width];
            let hot = slice.iter().filter(|&&v| v >= 0.5).count();
            if hot > 1 {
                return Err(TimebaseError::VtickMultiHot(block));
            }
            if hot == 1 {
                let (best, _) =
                    slice
                        .iter()
                        .enumerate()
                        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                digits[block] = best as u8 + 1;
            }
            offset += width;
        }
        Ok(VtickCode { digits })
    }

    pub fn value(&self) -> u32 {
        self.digits.iter().zip(VTICK_PLACES.iter()).map(|(&d, &p)| d as u32 * p).sum()
    }
}

/// Encode a tick in `[0, 1920)`.
pub fn vtick_encode(tick: u32) -> Result<VtickCode, TimebaseError> {
    if tick >= WHOLE {
        return Err(TimebaseError::VtickRange(tick));
    }
    let mut rest = tick;
    let mut digits = [0u8; 9];
    for (digit, &place) in digits.iter_mut().zip(VTICK_PLACES.iter()) {
        *digit = (rest / place) as u8;
        rest %= place;
    }
    Ok(VtickCode { digits })
}

pub fn vtick_decode(code: &VtickCode) -> u32 {
    code.value()
}

/// Total encoding for ticks past one whole note: `(tick div 1920, code of the remainder)`.
pub fn vtick_encode_wide(tick: u32) -> (u32, VtickCode) {
    let code = vtick_encode(tick % WHOLE).expect("remainder is in range");
    (tick / WHOLE, code)
}

pub fn vtick_decode_wide(quotient: u32, code: &VtickCode) -> u32 {
    quotient * WHOLE + code.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_table() {
        assert_eq!(duration_ticks(2, 0).unwrap(), 480);
        assert_eq!(duration_ticks(3, 1).unwrap(), 360);
        assert_eq!(duration_ticks(0, 0).unwrap(), 1920);
        assert_eq!(duration_ticks(1, 1).unwrap(), 1440);
    }

    #[test]
    fn sub_tick_duration_is_an_error() {
        // 1920 / 256 * 1.75 = 13.125
        assert!(matches!(duration_ticks(8, 2), Err(TimebaseError::SubTickDuration { .. })));
        assert_eq!(duration_ratio(8, 2).unwrap(), Ratio::new(105, 8));
        assert!(duration_ticks(9, 0).is_err());
        assert!(duration_ticks(0, 3).is_err());
    }

    #[test]
    fn warps() {
        assert_eq!(warp_duration(240, 2, 3).unwrap(), Ratio::from_integer(160));
        assert_eq!(warp_duration(480, 1, 1).unwrap(), Ratio::from_integer(480));
        assert_eq!(warp_duration(480, 3, 4).unwrap(), Ratio::from_integer(360));
        assert!(warp_duration(480, 1, 2).is_err());
        assert!(warp_duration(480, 2, 5).is_err());
        assert!(TimeWarp::TRIPLET.is_regular());
        assert!(!TimeWarp::new(4, 5).unwrap().is_regular());
    }

    #[test]
    fn vtick_worked_example() {
        let code = vtick_encode(1234).unwrap();
        assert_eq!(code.digits, [1, 0, 1, 0, 0, 1, 0, 0, 4]);
        assert_eq!(code.to_vector(), [1., 0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1.]);
        assert_eq!(vtick_encode(0).unwrap().to_vector(), [0.0; 13]);
    }

    #[test]
    fn vtick_top_value_matches_brute_force() {
        // brute-force mixed radix conversion, least significant digit first
        let mut t = 1919u32;
        let mut digits = [0u8; 9];
        for i in (0..9).rev() {
            digits[i] = (t % VTICK_RADICES[i]) as u8;
            t /= VTICK_RADICES[i];
        }
        assert_eq!(digits, [1, 1, 1, 1, 1, 1, 1, 2, 4]);
        assert_eq!(vtick_encode(1919).unwrap().digits, digits);
    }

    #[test]
    fn vtick_errors() {
        assert!(vtick_encode(1920).is_err());
        let mut v = [0.0; 13];
        v[9] = 0.9;
        v[10] = 0.7;
        assert_eq!(VtickCode::from_vector(&v), Err(TimebaseError::VtickMultiHot(8)));
        assert!(VtickCode::from_vector(&[0.0; 12]).is_err());
        assert!(VtickCode::from_digits([2, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn vtick_soft_decode() {
        let mut v = [0.1; 13];
        v[0] = 0.8;
        v[8] = 0.6; // digit 7 = 2
        assert_eq!(VtickCode::from_vector(&v).unwrap().value(), 960 + 10);
    }

    #[test]
    fn wide_ticks() {
        let (q, code) = vtick_encode_wide(2880);
        assert_eq!(q, 1);
        assert_eq!(code.value(), 960);
        assert_eq!(vtick_decode_wide(q, &code), 2880);
    }
}
