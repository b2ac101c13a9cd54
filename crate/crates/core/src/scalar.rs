//! Scalar abstraction for time, rate and frequency arithmetic.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type used for every time/rate quantity in the engine.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Bits per byte, applied when turning payload bytes into transfer time.
    fn bits_per_byte() -> Self {
        Self::from_u8(8).expect("8 is representable")
    }

    fn from_count(value: u64) -> Self {
        Self::from_u64(value).expect("u64 converts to float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Time to push `bytes` over a link of `rate` bits per second.
#[inline]
pub fn transfer_seconds<T: Scalar>(bytes: u64, rate: T) -> T {
    T::bits_per_byte() * T::from_count(bytes) / rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_uses_eight_bits_per_byte() {
        assert_eq!(transfer_seconds(200_000, 2.0e6_f64), 0.8);
        assert!((transfer_seconds(200_000, 2.0e6_f32) - 0.8).abs() < 1e-6);
    }
}
