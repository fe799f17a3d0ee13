//! Scalar abstraction for the numeric core.
//!
//! All probability, loss, and gradient math is generic over [`Real`], so the
//! same code runs in `f32` and `f64`. The crate root exports `f64` aliases,
//! which is what the trainer, the file formats, and every stated tolerance
//! assume.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + core::ops::AddAssign
    + core::ops::SubAssign
    + core::ops::MulAssign
    + core::ops::DivAssign
    + core::iter::Sum
    + core::fmt::Debug
    + core::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from a literal. Every constant used in this crate is
    /// representable in both `f32` and `f64`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in any Real")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
