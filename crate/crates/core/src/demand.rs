//! User demand for gas as a function of the gas price.
//!
//! Three families are supported: linear demand clamped at zero, exponential
//! demand, and custom curves supplied as closures together with their first
//! two derivatives.

use std::fmt;
use std::sync::Arc;

use crate::error::{ModelError, Result};
use crate::numeric::adaptive_simpson;
use crate::scalar::Scalar;

type CurveFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// A user-supplied demand curve.
///
/// `value` must be nonnegative and nonincreasing on `g >= 0`; `first` and
/// `second` are its first and second derivatives.
#[derive(Clone)]
pub struct CustomCurve<T> {
    pub name: String,
    value: CurveFn<T>,
    first: CurveFn<T>,
    second: CurveFn<T>,
}

impl<T> fmt::Debug for CustomCurve<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCurve").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Gas demanded at each price.
#[derive(Debug, Clone)]
pub enum DemandCurve<T> {
    /// `max(0, d0 - beta * g)`.
    Linear { d0: T, beta: T },
    /// `d0 * exp(-rate * g)`.
    Exponential { d0: T, rate: T },
    Custom(CustomCurve<T>),
}

impl<T: Scalar> DemandCurve<T> {
    pub fn linear(d0: T, beta: T) -> Result<Self> {
        check_positive("d0", d0)?;
        check_positive("beta", beta)?;
        Ok(DemandCurve::Linear { d0, beta })
    }

    pub fn exponential(d0: T, rate: T) -> Result<Self> {
        check_positive("d0", d0)?;
        check_positive("rate", rate)?;
        Ok(DemandCurve::Exponential { d0, rate })
    }

    pub fn custom<V, D1, D2>(name: impl Into<String>, value: V, first: D1, second: D2) -> Self
    where
        V: Fn(T) -> T + Send + Sync + 'static,
        D1: Fn(T) -> T + Send + Sync + 'static,
        D2: Fn(T) -> T + Send + Sync + 'static,
    {
        DemandCurve::Custom(CustomCurve {
            name: name.into(),
            value: Arc::new(value),
            first: Arc::new(first),
            second: Arc::new(second),
        })
    }

    /// Smooth, strictly decreasing demand that violates the curvature
    /// condition behind the monotone marginal user share at high prices:
    /// `D(g) = a * exp(-(1 - (1 + g)^-2) / 2)`.
    pub fn curvature_counterexample(amplitude: T) -> Result<Self> {
        check_positive("amplitude", amplitude)?;
        let half = T::lit(0.5);
        let value = move |g: T| {
            let t = (T::one() + g).powi(-2);
            amplitude * (-(T::one() - t) * half).exp()
        };
        let first = move |g: T| -value(g) / (T::one() + g).powi(3);
        let second = move |g: T| {
            let d = value(g);
            let x = T::one() + g;
            d / x.powi(6) + T::lit(3.0) * d / x.powi(4)
        };
        Ok(Self::custom("curvature-counterexample", value, first, second))
    }

    /// Quantity demanded at price `g`.
    pub fn eval(&self, g: T) -> Result<T> {
        check_price(g)?;
        Ok(self.value_unchecked(g))
    }

    pub(crate) fn value_unchecked(&self, g: T) -> T {
        match self {
            DemandCurve::Linear { d0, beta } => (*d0 - *beta * g).max(T::zero()),
            DemandCurve::Exponential { d0, rate } => *d0 * (-*rate * g).exp(),
            DemandCurve::Custom(c) => (c.value)(g).max(T::zero()),
        }
    }

    /// Demand at a zero price.
    pub fn intercept(&self) -> T {
        self.value_unchecked(T::zero())
    }

    /// `(d0, beta)` for linear curves.
    pub fn linear_parts(&self) -> Option<(T, T)> {
        match self {
            DemandCurve::Linear { d0, beta } => Some((*d0, *beta)),
            _ => None,
        }
    }

    /// Lowest price at which demand is exhausted, when finite.
    pub fn choke_price(&self) -> Option<T> {
        match self {
            DemandCurve::Linear { d0, beta } => Some(*d0 / *beta),
            _ => None,
        }
    }

    /// Inverse demand `P(q)`: the price at which `q` units of gas are demanded.
    pub fn inverse(&self, q: T) -> Result<T> {
        if q.is_nan() || q < T::zero() {
            return Err(ModelError::domain("quantity", q.as_f64(), "q >= 0"));
        }
        let top = self.intercept();
        // one ulp-scale of slack so that inverse(eval(0)) works for every curve
        if q > top * (T::one() + T::epsilon() * T::lit(4.0)) {
            return Err(ModelError::domain("quantity", q.as_f64(), "q <= D(0)"));
        }
        let q = q.min(top);
        match self {
            DemandCurve::Linear { d0, beta } => Ok((*d0 - q) / *beta),
            DemandCurve::Exponential { d0, rate } => {
                if q == T::zero() {
                    Ok(T::infinity())
                } else {
                    Ok((*d0 / q).ln() / *rate)
                }
            }
            DemandCurve::Custom(_) => self.inverse_by_bisection(q),
        }
    }

    /// Inverse demand with the argument clamped into `[0, D(0)]`.
    pub(crate) fn inverse_clamped(&self, q: T) -> T {
        let q = q.max(T::zero()).min(self.intercept());
        self.inverse(q).unwrap_or(T::infinity())
    }

    fn inverse_by_bisection(&self, q: T) -> Result<T> {
        if q >= self.intercept() {
            return Ok(T::zero());
        }
        let mut hi = T::one();
        let mut expansions = 0;
        while self.value_unchecked(hi) > q {
            hi = hi * T::lit(2.0);
            expansions += 1;
            if expansions > 200 || !hi.is_finite() {
                return Err(ModelError::domain(
                    "quantity",
                    q.as_f64(),
                    "above the curve's limiting demand",
                ));
            }
        }
        let mut lo = T::zero();
        let tol = T::lit(1e-13).max(T::epsilon());
        for _ in 0..400 {
            let mid = lo + (hi - lo) / T::lit(2.0);
            if mid <= lo || mid >= hi || hi - lo <= tol * T::one().max(hi) {
                break;
            }
            if self.value_unchecked(mid) > q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo + (hi - lo) / T::lit(2.0))
    }

    /// First or second derivative of demand with respect to price.
    ///
    /// The clamped linear curve uses the left derivative at its kink.
    pub fn derivative(&self, g: T, order: u8) -> Result<T> {
        check_price(g)?;
        if order != 1 && order != 2 {
            return Err(ModelError::Argument(format!("derivative order must be 1 or 2, got {order}")));
        }
        Ok(match (self, order) {
            (DemandCurve::Linear { d0, beta }, 1) => {
                if g <= *d0 / *beta {
                    -*beta
                } else {
                    T::zero()
                }
            }
            (DemandCurve::Linear { .. }, _) => T::zero(),
            (DemandCurve::Exponential { d0, rate }, 1) => -*rate * *d0 * (-*rate * g).exp(),
            (DemandCurve::Exponential { d0, rate }, _) => *rate * *rate * *d0 * (-*rate * g).exp(),
            (DemandCurve::Custom(c), 1) => (c.first)(g),
            (DemandCurve::Custom(c), _) => (c.second)(g),
        })
    }

    /// The curve with demand multiplied by `lambda` at every price.
    pub fn scale(&self, lambda: T) -> Result<Self> {
        if lambda.is_nan() || lambda < T::one() || !lambda.is_finite() {
            return Err(ModelError::Argument(format!("scale factor must be >= 1, got {lambda}")));
        }
        Ok(match self {
            DemandCurve::Linear { d0, beta } => DemandCurve::Linear {
                d0: *d0 * lambda,
                beta: *beta * lambda,
            },
            DemandCurve::Exponential { d0, rate } => DemandCurve::Exponential {
                d0: *d0 * lambda,
                rate: *rate,
            },
            DemandCurve::Custom(c) => {
                let (v, d1, d2) = (c.value.clone(), c.first.clone(), c.second.clone());
                DemandCurve::Custom(CustomCurve {
                    name: format!("{} x{}", c.name, lambda),
                    value: Arc::new(move |g| lambda * v(g)),
                    first: Arc::new(move |g| lambda * d1(g)),
                    second: Arc::new(move |g| lambda * d2(g)),
                })
            }
        })
    }

    /// `g D D'' + 2 D D' - 2 g D'^2`; negative values make the marginal user
    /// share decrease with block capacity.
    pub fn mmus_condition(&self, g: T) -> Result<T> {
        let d = self.eval(g)?;
        let d1 = self.derivative(g, 1)?;
        let d2 = self.derivative(g, 2)?;
        let two = T::lit(2.0);
        Ok(g * d * d2 + two * d * d1 - two * g * d1 * d1)
    }

    /// `∫_0^z P(q) dq`, the gross value of the first `z` units of demand.
    ///
    /// Closed form for linear and exponential curves, quadrature otherwise.
    pub fn inverse_integral(&self, z: T, quadrature_tol: T) -> Result<T> {
        if z.is_nan() || z < T::zero() {
            return Err(ModelError::domain("quantity", z.as_f64(), "q >= 0"));
        }
        let top = self.intercept();
        if z > top * (T::one() + T::epsilon() * T::lit(4.0)) {
            return Err(ModelError::domain("quantity", z.as_f64(), "q <= D(0)"));
        }
        let z = z.min(top);
        if z == T::zero() {
            return Ok(T::zero());
        }
        match self {
            DemandCurve::Linear { d0, beta } => Ok(z * *d0 / *beta - z * z / (T::lit(2.0) * *beta)),
            DemandCurve::Exponential { d0, rate } => Ok((z * (*d0 / z).ln() + z) / *rate),
            DemandCurve::Custom(_) => self.inverse_integral_quadrature(z, quadrature_tol),
        }
    }

    /// `∫_0^z P(q) dq` by adaptive Simpson quadrature, for any curve.
    pub fn inverse_integral_quadrature(&self, z: T, rel_tol: T) -> Result<T> {
        let z = z.max(T::zero()).min(self.intercept());
        if z == T::zero() {
            return Ok(T::zero());
        }
        // q = z t^2 tames an integrable blow-up of P at q = 0
        let two = T::lit(2.0);
        let f = |t: T| {
            if t == T::zero() {
                return Ok(T::zero());
            }
            Ok(self.inverse(z * t * t)? * two * z * t)
        };
        let scale = z * self.inverse(z)?.abs().max(T::one());
        adaptive_simpson(&f, T::zero(), T::one(), rel_tol * scale, 50)
    }
}

fn check_positive<T: Scalar>(what: &'static str, x: T) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(ModelError::domain(what, x.as_f64(), "finite and > 0"))
    }
}

fn check_price<T: Scalar>(g: T) -> Result<()> {
    if g >= T::zero() {
        Ok(())
    } else {
        Err(ModelError::domain("price", g.as_f64(), "g >= 0"))
    }
}
