use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::Bounds;

/// Position of the layer/substrate interface in scaled coordinates.
pub const INTERFACE: f64 = 1.0;

/// Reference (substrate) material: copper.
pub const COPPER_ALPHA: f64 = 1.14e-4;
pub const COPPER_KAPPA: f64 = 398.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LeftBc {
    /// Zero flux at `x̄ = 0`.
    Adiabatic,
    /// `ū(0, t̄) = value`.
    Fixed { value: f64 },
    /// `ū(0, t̄) = t̄`.
    Ramp,
}

impl LeftBc {
    /// Prescribed temperature, or `None` for a flux condition.
    pub fn value(&self, t: f64) -> Option<f64> {
        match *self {
            LeftBc::Adiabatic => None,
            LeftBc::Fixed { value } => Some(value),
            LeftBc::Ramp => Some(t),
        }
    }
}

/// Layer on `[0, 1]` bonded to a substrate on `[1, x_max]`, both scaled by
/// the substrate properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionlessProblem {
    /// Layer-to-substrate diffusivity ratio.
    pub alpha: f64,
    /// Layer-to-substrate conductivity ratio.
    pub kappa: f64,
    /// Diffusivity used in the substrate equation (1 in scaled form).
    #[serde(default = "one")]
    pub substrate_alpha: f64,
    #[serde(default = "ten")]
    pub x_max: f64,
    #[serde(default = "one")]
    pub t_max: f64,
    /// Volumetric source strength in the layer.
    #[serde(default)]
    pub source: f64,
    pub left_bc: LeftBc,
    #[serde(default)]
    pub far_value: f64,
    pub ic_layer: f64,
    pub ic_substrate: f64,
}

fn one() -> f64 {
    1.0
}

fn ten() -> f64 {
    10.0
}

impl DimensionlessProblem {
    /// Heated layer cooling into the substrate through an insulated left end.
    pub fn benchmark() -> Self {
        Self {
            alpha: 0.3,
            kappa: 0.5,
            substrate_alpha: 1.0,
            x_max: 10.0,
            t_max: 1.0,
            source: 0.0,
            left_bc: LeftBc::Adiabatic,
            far_value: 0.0,
            ic_layer: 1.0,
            ic_substrate: 0.0,
        }
    }

    /// Step initial condition with the left end held at 1.
    pub fn s1a() -> Self {
        Self { left_bc: LeftBc::Fixed { value: 1.0 }, ..Self::benchmark() }
    }

    /// Left end heated linearly in time from a cold start.
    pub fn s1b() -> Self {
        Self { left_bc: LeftBc::Ramp, ic_layer: 0.0, ..Self::benchmark() }
    }

    /// Constant volumetric source in the layer, insulated left end, cold start.
    pub fn s1c(source: f64) -> Self {
        Self { source, ic_layer: 0.0, ..Self::benchmark() }
    }

    /// Cold start heated from the left end at unit temperature.
    pub fn heating() -> Self {
        Self { left_bc: LeftBc::Fixed { value: 1.0 }, ic_layer: 0.0, ..Self::benchmark() }
    }

    /// The identification scenario for given layer properties.
    pub fn inverse(alpha: f64, kappa: f64) -> Self {
        Self { alpha, kappa, ..Self::heating() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha,
            self.kappa,
            self.substrate_alpha,
            self.x_max,
            self.t_max,
            self.source,
            self.far_value,
            self.ic_layer,
            self.ic_substrate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("problem parameters must be finite"));
        }
        if !(self.alpha > 0.0 && self.kappa > 0.0 && self.substrate_alpha > 0.0) {
            return Err(Error::config("diffusivity and conductivity ratios must be positive"));
        }
        if self.x_max <= INTERFACE {
            return Err(Error::config(format!("x_max must exceed the interface at {INTERFACE}")));
        }
        if self.t_max <= 0.0 {
            return Err(Error::config("t_max must be positive"));
        }
        if let LeftBc::Fixed { value } = self.left_bc {
            if !value.is_finite() {
                return Err(Error::config("left boundary value must be finite"));
            }
        }
        Ok(())
    }

    /// Volumetric heat capacity ratio `κ̄/ᾱ`.
    pub fn rho_c(&self) -> f64 {
        self.kappa / self.alpha
    }

    pub fn layer_bounds(&self) -> Bounds {
        Bounds { lo: 0.0, hi: INTERFACE }
    }

    pub fn substrate_bounds(&self) -> Bounds {
        Bounds { lo: INTERFACE, hi: self.x_max }
    }

    /// Whether the initial temperatures differ across the interface.
    pub fn step_ic(&self) -> bool {
        self.ic_layer != self.ic_substrate
    }

    /// Initial temperature; at the interface itself the capacity-weighted
    /// mean of the two sides.
    pub fn ic(&self, x: f64) -> f64 {
        if x < INTERFACE {
            self.ic_layer
        } else if x > INTERFACE {
            self.ic_substrate
        } else {
            let c = self.rho_c();
            (c * self.ic_layer + self.ic_substrate) / (c + 1.0)
        }
    }

    /// Source contribution `w̄/ρ̄c̄ = w̄·ᾱ/κ̄` to the layer equation.
    pub fn source_rate(&self) -> f64 {
        self.source / self.rho_c()
    }
}

/// Ratios of physical properties to the copper reference:
/// `(ᾱ, κ̄, ρ̄c̄)`.
pub fn nondimensionalize(alpha: f64, kappa: f64) -> Result<(f64, f64, f64)> {
    if !(alpha > 0.0 && kappa > 0.0) || !alpha.is_finite() || !kappa.is_finite() {
        return Err(Error::invalid("physical diffusivity and conductivity must be positive"));
    }
    let a = alpha / COPPER_ALPHA;
    let k = kappa / COPPER_KAPPA;
    Ok((a, k, k / a))
}

/// Hard box for the identified properties and the soft band for `ρ̄c̄`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub alpha: (f64, f64),
    pub kappa: (f64, f64),
    pub rho_c: (f64, f64),
}

impl Default for Feasibility {
    fn default() -> Self {
        Self { alpha: (0.1, 0.9), kappa: (0.01, 0.9), rho_c: (0.04, 1.3) }
    }
}

/// Trainable layer properties. `ρ̄c̄` is always derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialEstimate {
    pub alpha: f64,
    pub kappa: f64,
}

impl MaterialEstimate {
    pub fn new(alpha: f64, kappa: f64) -> Self {
        Self { alpha, kappa }
    }

    pub fn rho_c(&self) -> f64 {
        self.kappa / self.alpha
    }

    pub fn in_box(&self, f: &Feasibility) -> bool {
        (f.alpha.0..=f.alpha.1).contains(&self.alpha) && (f.kappa.0..=f.kappa.1).contains(&self.kappa)
    }

    /// Relative errors in percent for `(ᾱ, κ̄, ρ̄c̄)`.
    pub fn relative_errors(&self, truth: &MaterialEstimate) -> [f64; 3] {
        let rel = |a: f64, b: f64| 100.0 * (a - b).abs() / b.abs();
        [
            rel(self.alpha, truth.alpha),
            rel(self.kappa, truth.kappa),
            rel(self.rho_c(), truth.rho_c()),
        ]
    }
}

/// Clamps each property into its box.
pub fn project_estimate(e: MaterialEstimate, f: &Feasibility) -> MaterialEstimate {
    MaterialEstimate { alpha: e.alpha.clamp(f.alpha.0, f.alpha.1), kappa: e.kappa.clamp(f.kappa.0, f.kappa.1) }
}

/// Quadratic distance of `ρ̄c̄` from its feasible band.
pub fn rho_c_hinge(rho_c: f64, band: (f64, f64)) -> f64 {
    let below = (band.0 - rho_c).max(0.0);
    let above = (rho_c - band.1).max(0.0);
    below * below + above * above
}
