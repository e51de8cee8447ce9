use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Mish,
}

impl Activation {
    pub const LEAKY_DEFAULT: Activation = Activation::LeakyRelu { alpha: 0.01 };

    #[inline]
    pub fn apply<T: Scalar>(self, s: T) -> T {
        match self {
            Activation::Relu => s.max(T::zero()),
            Activation::LeakyRelu { alpha } => {
                if s > T::zero() {
                    s
                } else {
                    T::lit(alpha) * s
                }
            }
            Activation::Mish => mish(s),
        }
    }

    /// Derivative at `s`; the kinked activations use the left slope at 0.
    #[inline]
    pub fn derivative<T: Scalar>(self, s: T) -> T {
        match self {
            Activation::Relu => {
                if s > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { alpha } => {
                if s > T::zero() {
                    T::one()
                } else {
                    T::lit(alpha)
                }
            }
            Activation::Mish => mish_derivative(s),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leakyrelu",
            Activation::Mish => "mish",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu { alpha } if *alpha != 0.01 => write!(f, "leakyrelu({alpha})"),
            a => f.write_str(a.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = s.split_at(s.find('(').unwrap_or(s.len()));
        let s = name.replace(['-', '_'], "") + arg;
        match s.as_str() {
            "relu" => return Ok(Activation::Relu),
            "mish" => return Ok(Activation::Mish),
            "leakyrelu" | "lkrelu" => return Ok(Activation::LEAKY_DEFAULT),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("leakyrelu(").and_then(|r| r.strip_suffix(')')) {
            let alpha: f64 = inner
                .parse()
                .map_err(|_| Error::malformed(format!("bad leaky-relu slope `{inner}`")))?;
            if alpha > 0.0 && alpha.is_finite() {
                return Ok(Activation::LeakyRelu { alpha });
            }
            return Err(Error::malformed("leaky-relu slope must be positive"));
        }
        Err(Error::malformed(format!("unknown activation `{s}`")))
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

/// `ln(1 + e^s)`, switching to its asymptotes outside `[-20, 20]`.
#[inline]
pub fn softplus<T: Scalar>(s: T) -> T {
    let twenty = T::lit(20.0);
    if s > twenty {
        s
    } else if s < -twenty {
        s.exp()
    } else {
        s.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

/// `tanh(softplus(s))` from a single exponential: with `n = e^s (e^s + 2)`
/// it equals `n / (n + 2)`.
#[inline]
fn tanh_softplus<T: Scalar>(s: T) -> (T, T) {
    if s > T::lit(20.0) {
        return (T::one(), T::one());
    }
    let e = s.exp();
    let n = e * (e + T::lit(2.0));
    (n / (n + T::lit(2.0)), e / (T::one() + e))
}

/// `s * tanh(softplus(s))`.
#[inline]
pub fn mish<T: Scalar>(s: T) -> T {
    s * tanh_softplus(s).0
}

/// `tanh(sp(s)) + s * sech^2(sp(s)) * sigmoid(s)`.
#[inline]
pub fn mish_derivative<T: Scalar>(s: T) -> T {
    let (t, sig) = tanh_softplus(s);
    t + s * (T::one() - t * t) * sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mish_reference_points() {
        assert_eq!(mish(0.0f64), 0.0);
        assert_abs_diff_eq!(mish(100.0f64), 100.0, epsilon = 1e-12);
        let expected = (1.0f64 + 1f64.exp()).ln().tanh();
        assert_abs_diff_eq!(mish(1.0f64), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(mish(1.0f64), 0.8651, epsilon = 1e-4);
        assert!(mish(-1000.0f64).abs() < 1e-300 || mish(-1000.0f64) == 0.0);
    }

    #[test]
    fn activation_pointwise_against_formulas() {
        let leaky = Activation::LEAKY_DEFAULT;
        for i in 0..1000 {
            let s = -10.0 + 20.0 * i as f64 / 999.0;
            assert_eq!(Activation::Relu.apply(s), s.max(0.0));
            assert_eq!(leaky.apply(s), if s > 0.0 { s } else { 0.01 * s });
            let direct = s * (1.0 + s.exp()).ln().tanh();
            assert_abs_diff_eq!(Activation::Mish.apply(s), direct, epsilon = 1e-12);
        }
        assert_eq!(leaky.apply(-1.0), -0.01);
    }

    #[test]
    fn mish_increasing_on_positive_axis() {
        let mut prev = mish(0.0f64);
        for i in 1..=2000 {
            let cur = mish(i as f64 * 0.01);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for act in [Activation::Relu, Activation::LEAKY_DEFAULT, Activation::Mish] {
            for s in [-25.0, -3.0, -0.4, 0.3, 2.0, 22.0] {
                let fd = (act.apply(s + h) - act.apply(s - h)) / (2.0 * h);
                assert_abs_diff_eq!(act.derivative(s), fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("mish".parse::<Activation>().unwrap(), Activation::Mish);
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::Relu);
        assert_eq!("leaky-relu".parse::<Activation>().unwrap(), Activation::LEAKY_DEFAULT);
        let a: Activation = "leakyrelu(0.2)".parse().unwrap();
        assert_eq!(a, Activation::LeakyRelu { alpha: 0.2 });
        assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        assert!("leakyrelu(-1)".parse::<Activation>().is_err());
        assert!("gelu".parse::<Activation>().is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }
}
