//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};

/// Real floating point type the library is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    /// Rescales a tolerance written for `f64` to this type's machine precision,
    /// keeping its power of the machine epsilon: `eps64^p` becomes `eps^p`.
    ///
    /// `tol(1e-10)` is `1e-10` for `f64` and roughly `4e-5` for `f32`.
    #[inline]
    fn tol(x: f64) -> Self {
        let eps = Self::epsilon().to_f64().unwrap_or(f64::EPSILON);
        if eps == f64::EPSILON {
            return Self::lit(x);
        }
        Self::lit(eps.powf(x.ln() / f64::EPSILON.ln()))
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type C<T> = Complex<T>;

#[inline]
pub fn c<T: Real>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub fn cr<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut y = x % two_pi;
    if y > T::PI() {
        y = y - two_pi;
    } else if y <= -T::PI() {
        y = y + two_pi;
    }
    y
}

/// Principal argument with the cut placed so that the negative real axis maps to `-pi`,
/// i.e. values in `[-pi, pi)`.
pub fn arg_lower<T: Real>(z: C<T>) -> T {
    let a = z.arg();
    if a >= T::PI() {
        a - (T::PI() + T::PI())
    } else {
        a
    }
}
