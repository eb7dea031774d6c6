//! Floating-point scalar abstraction shared by the metric and loss-statistics code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// A real scalar the numeric core can compute in: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumCast + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("f64 literal representable in scalar type")
    }

    /// Converts a count into this scalar type.
    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Arithmetic mean; zero for an empty slice.
///
/// Summed as offsets from the first value so constant inputs are exact.
pub fn mean<T: Scalar>(values: &[T]) -> T {
    let Some(&first) = values.first() else { return T::zero() };
    first + values.iter().map(|&v| v - first).sum::<T>() / T::count(values.len())
}

/// Population standard deviation around a precomputed mean.
pub fn population_std<T: Scalar>(values: &[T], mean: T) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::count(values.len());
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std_of_skewed_losses() {
        let losses = [1.0f64, 1.0, 1.0, 1.0, 10.0];
        let m = mean(&losses);
        assert!((m - 2.8).abs() < 1e-12);
        assert!((population_std(&losses, m) - 3.6).abs() < 1e-12);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let a = [0.5f32, 1.5, 2.25];
        let b = [0.5f64, 1.5, 2.25];
        let (ma, mb) = (mean(&a), mean(&b));
        assert!((ma as f64 - mb).abs() < 1e-6);
        assert!((population_std(&a, ma) as f64 - population_std(&b, mb)).abs() < 1e-6);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(mean::<f64>(&[]), 0.0);
        assert_eq!(population_std::<f64>(&[], 0.0), 0.0);
    }
}
