//! Scalar abstraction: the whole library is generic over the floating-point
//! type through this trait, with `f64` aliases exported at the crate root.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable by every container and algorithm.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + fmt::Debug + fmt::Display + fmt::LowerExp + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the active scalar type.
#[inline]
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from(x).expect("constant representable in scalar type")
}

/// Format a scalar with 17 significant decimal digits so emitted CSV files
/// are byte-stable across runs.
pub fn fmt17<S: Scalar>(x: S) -> String {
    if x.is_infinite() {
        return if x > S::zero() { "inf".to_string() } else { "-inf".to_string() };
    }
    format!("{:.16e}", x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cast_round_trips_f64() {
        let x: f64 = cast(0.25);
        assert_eq!(x, 0.25);
        let y: f32 = cast(0.25);
        assert_eq!(y, 0.25f32);
    }

    #[test]
    fn fmt17_is_stable() {
        assert_eq!(fmt17(1.0f64), "1.0000000000000000e0");
        assert_eq!(fmt17(f64::INFINITY), "inf");
    }
}
