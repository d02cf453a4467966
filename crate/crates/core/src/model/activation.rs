//! Activation functions with per-site trainable parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// `softplus⁻¹(1)`: the raw value that gives an effective decay rate of 1.
pub const LAMBDA_RAW_FOR_UNIT: f64 = 0.541_324_854_612_918_1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Laplace,
    Erfc,
    Relu,
    Tanh,
    Sin,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] =
        [Self::Laplace, Self::Erfc, Self::Relu, Self::Tanh, Self::Sin];

    pub fn name(self) -> &'static str {
        match self {
            Self::Laplace => "laplace",
            Self::Erfc => "erfc",
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sin => "sin",
        }
    }

    /// Names of the trainable scalars at one activation site.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Self::Laplace => &["w1", "w2", "lambda_raw", "omega"],
            Self::Erfc => &["amp", "scale", "bias"],
            Self::Relu | Self::Tanh => &["scale"],
            Self::Sin => &["omega0"],
        }
    }

    pub fn init_values(self) -> &'static [f64] {
        match self {
            Self::Laplace => &[1.0, 1.0, LAMBDA_RAW_FOR_UNIT, 1.0],
            Self::Erfc => &[1.0, 1.0, 0.0],
            Self::Relu | Self::Tanh | Self::Sin => &[1.0],
        }
    }

    pub fn params_per_site(self) -> usize {
        self.param_names().len()
    }

    /// Records the activation of `z` using the site parameters `p` (each 1x1).
    pub fn apply(self, g: &mut Graph, z: Var, p: &[Var]) -> Result<Var> {
        if p.len() != self.params_per_site() {
            return Err(Error::invalid(format!(
                "{} activation takes {} parameters, got {}",
                self.name(),
                self.params_per_site(),
                p.len()
            )));
        }
        match self {
            Self::Laplace => g.laplace_act(z, p[0], p[1], p[2], p[3]),
            Self::Erfc => {
                let s = g.mul(z, p[1])?;
                let s = g.add(s, p[2])?;
                let e = g.erfc(s)?;
                g.mul(e, p[0])
            }
            Self::Relu => {
                let s = g.mul(z, p[0])?;
                g.relu(s)
            }
            Self::Tanh => {
                let s = g.mul(z, p[0])?;
                g.tanh(s)
            }
            Self::Sin => {
                let s = g.mul(z, p[0])?;
                g.sin(s)
            }
        }
    }

    /// Plain evaluation of the activation for one input.
    pub fn eval(self, z: f64, p: &[f64]) -> f64 {
        match self {
            Self::Laplace => laplace_act(z, p[0], p[1], softplus(p[2]), p[3]),
            Self::Erfc => p[0] * libm::erfc(p[1] * z + p[2]),
            Self::Relu => (p[0] * z).max(0.0),
            Self::Tanh => (p[0] * z).tanh(),
            Self::Sin => (p[0] * z).sin(),
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown activation '{s}' (expected laplace, erfc, relu, tanh or sin)")))
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `w1·e^{-λ|z|}·cos(ω|z|) + w2·e^{-λ|z|}·sin(ω|z|)` with the effective
/// (already positive) decay rate `lambda`.
pub fn laplace_act(z: f64, w1: f64, w2: f64, lambda: f64, omega: f64) -> f64 {
    let t = z.abs();
    let (s, c) = (omega * t).sin_cos();
    (-lambda * t).exp() * (w1 * c + w2 * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn laplace_at_zero_is_w1() {
        assert_eq!(laplace_act(0.0, 0.37, -2.0, 3.0, 5.0), 0.37);
    }

    #[test]
    fn laplace_direct_evaluation() {
        let expected = (-1f64).exp() * ((PI).cos() + (PI).sin());
        assert_abs_diff_eq!(laplace_act(1.0, 1.0, 1.0, 1.0, PI), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(laplace_act(1.0, 1.0, 1.0, 1.0, PI), -0.367879, epsilon = 1e-6);
    }

    #[test]
    fn unit_lambda_raw_maps_to_one() {
        assert_abs_diff_eq!(softplus(LAMBDA_RAW_FOR_UNIT), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn baseline_forms() {
        assert_eq!(ActivationKind::Relu.eval(-2.0, &[1.0]), 0.0);
        assert_eq!(ActivationKind::Tanh.eval(0.0, &[1.0]), 0.0);
        assert_eq!(ActivationKind::Erfc.eval(0.0, &[1.0, 1.0, 0.0]), 1.0);
        assert_abs_diff_eq!(ActivationKind::Sin.eval(0.5, &[2.0]), 1f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn parse_names() {
        for k in ActivationKind::ALL {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
        }
        assert!("gelu".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn graph_matches_plain_evaluation() {
        let zs = Array2::from_shape_fn((1, 9), |(_, j)| -2.0 + 0.5 * j as f64 + 0.01);
        for k in ActivationKind::ALL {
            let init = k.init_values();
            let p: Vec<f64> = init.iter().enumerate().map(|(i, v)| v + 0.1 * i as f64).collect();
            let mut g = Graph::new();
            let z = g.constant(zs.clone()).unwrap();
            let pv: Vec<Var> = p.iter().map(|&v| g.scalar_param(v).unwrap()).collect();
            let y = k.apply(&mut g, z, &pv).unwrap();
            for (a, &zi) in g.value(y).iter().zip(zs.iter()) {
                assert_abs_diff_eq!(*a, k.eval(zi, &p), epsilon = 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn laplace_is_even(z in -50.0f64..50.0, w1 in -3.0f64..3.0, w2 in -3.0f64..3.0,
                           raw in -5.0f64..5.0, om in -5.0f64..5.0) {
            let lam = softplus(raw);
            prop_assert_eq!(laplace_act(z, w1, w2, lam, om), laplace_act(-z, w1, w2, lam, om));
        }

        #[test]
        fn laplace_is_bounded_by_decaying_envelope(z in -50.0f64..50.0, w1 in -3.0f64..3.0,
                                                   w2 in -3.0f64..3.0, raw in -5.0f64..5.0,
                                                   om in -5.0f64..5.0) {
            let lam = softplus(raw);
            prop_assert!(lam > 0.0);
            let env = (w1.abs() + w2.abs()) * (-lam * z.abs()).exp();
            let y = laplace_act(z, w1, w2, lam, om);
            prop_assert!(y.abs() <= env * (1.0 + 1e-12) + 1e-300);
            prop_assert!(env <= w1.abs() + w2.abs());
        }
    }

    #[test]
    fn laplace_vanishes_far_away() {
        assert!(laplace_act(1e3, 1.0, 1.0, softplus(-3.0), 2.0).abs() < 1e-20);
    }
}
