use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Pointwise nonlinearity `φ` together with its derivative.
///
/// `Erf` is scaled as `erf(√π z / 2)` so that `φ′(0) = 1`, like `Tanh`.
/// Subgradients at kinks are zero: `ReLU′(0) = 0` and `HardTanh′(±1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Linear,
    ReLU,
    Tanh,
    HardTanh,
    Erf,
}

const ERF_SCALE: f64 = 0.886_226_925_452_758; // √π / 2

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Linear,
        Activation::ReLU,
        Activation::Tanh,
        Activation::HardTanh,
        Activation::Erf,
    ];

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::HardTanh => z.clamp(-1.0, 1.0),
            Activation::Erf => libm::erf(ERF_SCALE * z),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::HardTanh => {
                if z.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            // d/dz erf(s z) = 2s/√π · exp(−s²z²) = exp(−π z² / 4)
            Activation::Erf => (-ERF_SCALE * ERF_SCALE * z * z).exp(),
        }
    }

    /// Points where `φ` is not differentiable.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::ReLU => &[0.0],
            Activation::HardTanh => &[-1.0, 1.0],
            _ => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::ReLU => "relu",
            Activation::Tanh => "tanh",
            Activation::HardTanh => "hardtanh",
            Activation::Erf => "erf",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::ReLU),
            "tanh" => Ok(Activation::Tanh),
            "hardtanh" => Ok(Activation::HardTanh),
            "erf" => Ok(Activation::Erf),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?} (expected linear, relu, tanh, hardtanh or erf)"
            ))),
        }
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> Self {
        a.name().to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn values() {
        assert_eq!(Activation::ReLU.value(-2.0), 0.0);
        assert_eq!(Activation::HardTanh.value(0.5), 0.5);
        assert_abs_diff_eq!(Activation::Tanh.value(1.0), 1f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(Activation::Tanh.value(1.0), 0.761_594_155_955_764_9, epsilon = 1e-15);
        for a in Activation::ALL {
            assert_eq!(a.value(0.0), 0.0, "{a}");
        }
    }

    #[test]
    fn derivatives() {
        assert_eq!(Activation::Linear.derivative(123.0), 1.0);
        assert_eq!(Activation::ReLU.derivative(3.0), 1.0);
        assert_eq!(Activation::ReLU.derivative(-3.0), 0.0);
        assert_eq!(Activation::ReLU.derivative(0.0), 0.0);
        assert_eq!(Activation::HardTanh.derivative(1.0), 0.0);
        assert_eq!(Activation::HardTanh.derivative(-1.0), 0.0);
        let h = 1e-6;
        let fd = (0.5f64 + h).tanh() - (0.5f64 - h).tanh();
        assert_abs_diff_eq!(Activation::Tanh.derivative(0.5), fd / (2.0 * h), epsilon = 1e-9);
        assert_abs_diff_eq!(Activation::Tanh.derivative(0.5), 0.786_447_732_965_927, epsilon = 1e-12);
        assert_abs_diff_eq!(Activation::Erf.derivative(0.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn smooth_kinds_match_central_differences() {
        let h = 1e-5;
        for a in [Activation::Linear, Activation::Tanh, Activation::Erf] {
            for i in 0..=200 {
                let z = -5.0 + 0.05 * i as f64;
                let fd = (a.value(z + h) - a.value(z - h)) / (2.0 * h);
                assert!((a.derivative(z) - fd).abs() < 1e-6, "{a} at {z}");
            }
        }
    }

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("ReLU".parse::<Activation>().unwrap(), Activation::ReLU);
        assert_eq!("HARDTANH".parse::<Activation>().unwrap(), Activation::HardTanh);
        assert_eq!(" erf ".parse::<Activation>().unwrap(), Activation::Erf);
        assert!("selu".parse::<Activation>().is_err());
        for a in Activation::ALL {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
    }

    proptest! {
        #[test]
        fn relu_is_z_times_slope(z in -1e3f64..1e3) {
            prop_assume!(z != 0.0);
            prop_assert_eq!(Activation::ReLU.value(z), z * Activation::ReLU.derivative(z));
        }

        #[test]
        fn odd_kinds(z in -50f64..50.0) {
            for a in [Activation::Linear, Activation::Tanh, Activation::HardTanh, Activation::Erf] {
                prop_assert_eq!(a.value(-z), -a.value(z));
            }
        }

        #[test]
        fn slopes_bounded(z in -50f64..50.0) {
            for a in Activation::ALL {
                prop_assert!(a.derivative(z).abs() <= 1.0);
            }
        }
    }
}
