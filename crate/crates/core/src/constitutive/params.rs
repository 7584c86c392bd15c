use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::elasticity::{
    stiffness_isotropic, stiffness_isotropic_derivatives, stiffness_transverse_isotropic,
    stiffness_transverse_isotropic_derivatives,
};
use crate::error::{Error, Result};
use nalgebra::Matrix6;

/// Identifier of a scalar model parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    #[serde(rename = "K")]
    Bulk,
    #[serde(rename = "G")]
    Shear,
    #[serde(rename = "E")]
    Young,
    #[serde(rename = "nu")]
    Poisson,
    #[serde(rename = "nu_perp")]
    PoissonPerp,
    #[serde(rename = "B")]
    Anisotropy,
    #[serde(rename = "Y0")]
    YieldStress,
    #[serde(rename = "H")]
    Hardening,
}

impl ParamId {
    pub fn name(self) -> &'static str {
        match self {
            ParamId::Bulk => "K",
            ParamId::Shear => "G",
            ParamId::Young => "E",
            ParamId::Poisson => "nu",
            ParamId::PoissonPerp => "nu_perp",
            ParamId::Anisotropy => "B",
            ParamId::YieldStress => "Y0",
            ParamId::Hardening => "H",
        }
    }

    /// True for parameters that only act once the yield surface is reached.
    pub fn is_plastic(self) -> bool {
        matches!(self, ParamId::Anisotropy | ParamId::YieldStress | ParamId::Hardening)
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "K" => ParamId::Bulk,
            "G" => ParamId::Shear,
            "E" => ParamId::Young,
            "nu" => ParamId::Poisson,
            "nu_perp" => ParamId::PoissonPerp,
            "B" => ParamId::Anisotropy,
            "Y0" => ParamId::YieldStress,
            "H" => ParamId::Hardening,
            other => return Err(Error::InvalidParameter(format!("unknown parameter `{other}`"))),
        })
    }
}

/// Elastic parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Elasticity {
    /// Bulk and shear moduli.
    Isotropic { bulk: f64, shear: f64 },
    /// Axis 1 is the distinguished direction; the 2-3 plane is isotropic.
    TransverselyIsotropic { young: f64, poisson: f64, poisson_perp: f64 },
}

/// Elastoplastic parameter set: elasticity, Hill anisotropy `B`, initial
/// yield strength `Y0` and linear hardening modulus `H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub elasticity: Elasticity,
    #[serde(rename = "B")]
    pub anisotropy: f64,
    /// `f64::INFINITY` disables plasticity.
    #[serde(rename = "Y0")]
    pub yield_stress: f64,
    #[serde(rename = "H")]
    pub hardening: f64,
}

impl ModelParams {
    /// Isotropic elasticity with the von Mises (`B = 1`) surface.
    pub fn von_mises(bulk: f64, shear: f64, yield_stress: f64, hardening: f64) -> Self {
        Self {
            elasticity: Elasticity::Isotropic { bulk, shear },
            anisotropy: 1.0,
            yield_stress,
            hardening,
        }
    }

    /// Purely elastic isotropic material.
    pub fn isotropic_elastic(bulk: f64, shear: f64) -> Self {
        Self::von_mises(bulk, shear, f64::INFINITY, 0.0)
    }

    pub fn hill(
        young: f64,
        poisson: f64,
        poisson_perp: f64,
        anisotropy: f64,
        yield_stress: f64,
        hardening: f64,
    ) -> Self {
        Self {
            elasticity: Elasticity::TransverselyIsotropic { young, poisson, poisson_perp },
            anisotropy,
            yield_stress,
            hardening,
        }
    }

    /// All parameters of this parameterization, elastic ones first.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = match self.elasticity {
            Elasticity::Isotropic { .. } => vec![ParamId::Bulk, ParamId::Shear],
            Elasticity::TransverselyIsotropic { .. } => {
                vec![ParamId::Young, ParamId::Poisson, ParamId::PoissonPerp]
            }
        };
        ids.extend([ParamId::Anisotropy, ParamId::YieldStress, ParamId::Hardening]);
        ids
    }

    pub fn get(&self, id: ParamId) -> Option<f64> {
        match (id, self.elasticity) {
            (ParamId::Bulk, Elasticity::Isotropic { bulk, .. }) => Some(bulk),
            (ParamId::Shear, Elasticity::Isotropic { shear, .. }) => Some(shear),
            (ParamId::Young, Elasticity::TransverselyIsotropic { young, .. }) => Some(young),
            (ParamId::Poisson, Elasticity::TransverselyIsotropic { poisson, .. }) => Some(poisson),
            (ParamId::PoissonPerp, Elasticity::TransverselyIsotropic { poisson_perp, .. }) => {
                Some(poisson_perp)
            }
            (ParamId::Anisotropy, _) => Some(self.anisotropy),
            (ParamId::YieldStress, _) => Some(self.yield_stress),
            (ParamId::Hardening, _) => Some(self.hardening),
            _ => None,
        }
    }

    pub fn set(&mut self, id: ParamId, value: f64) -> Result<()> {
        match (id, &mut self.elasticity) {
            (ParamId::Bulk, Elasticity::Isotropic { bulk, .. }) => *bulk = value,
            (ParamId::Shear, Elasticity::Isotropic { shear, .. }) => *shear = value,
            (ParamId::Young, Elasticity::TransverselyIsotropic { young, .. }) => *young = value,
            (ParamId::Poisson, Elasticity::TransverselyIsotropic { poisson, .. }) => *poisson = value,
            (ParamId::PoissonPerp, Elasticity::TransverselyIsotropic { poisson_perp, .. }) => {
                *poisson_perp = value
            }
            (ParamId::Anisotropy, _) => self.anisotropy = value,
            (ParamId::YieldStress, _) => self.yield_stress = value,
            (ParamId::Hardening, _) => self.hardening = value,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "{id} is not part of this elastic parameterization"
                )))
            }
        }
        Ok(())
    }

    /// Values for `ids`, in order.
    pub fn values(&self, ids: &[ParamId]) -> Result<Vec<f64>> {
        ids.iter()
            .map(|&id| {
                self.get(id).ok_or_else(|| {
                    Error::InvalidParameter(format!("{id} is not part of this parameterization"))
                })
            })
            .collect()
    }

    /// Copy with `ids` overwritten by `values`.
    pub fn with_values(&self, ids: &[ParamId], values: &[f64]) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} parameter ids but {} values",
                ids.len(),
                values.len()
            )));
        }
        let mut p = *self;
        for (&id, &v) in ids.iter().zip(values) {
            p.set(id, v)?;
        }
        Ok(p)
    }

    /// Checks the admissible ranges of every parameter.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self.elasticity {
            Elasticity::Isotropic { bulk, shear } => {
                if !(bulk > 0.0 && bulk.is_finite()) {
                    return bad(format!("K must be positive, got {bulk}"));
                }
                if !(shear > 0.0 && shear.is_finite()) {
                    return bad(format!("G must be positive, got {shear}"));
                }
            }
            Elasticity::TransverselyIsotropic { young, poisson, poisson_perp } => {
                if !(young > 0.0 && young.is_finite()) {
                    return bad(format!("E must be positive, got {young}"));
                }
                if !(poisson > -1.0 && poisson < 0.5) {
                    return bad(format!("nu must lie in (-1, 0.5), got {poisson}"));
                }
                if !(poisson_perp > -1.0 && poisson_perp < 0.5) {
                    return bad(format!("nu_perp must lie in (-1, 0.5), got {poisson_perp}"));
                }
            }
        }
        if !(self.anisotropy > 0.0 && self.anisotropy.is_finite()) {
            return bad(format!("B must be positive, got {}", self.anisotropy));
        }
        if !(self.yield_stress > 0.0) {
            return bad(format!("Y0 must be positive or infinite, got {}", self.yield_stress));
        }
        if !(self.hardening >= 0.0 && self.hardening.is_finite()) {
            return bad(format!("H must be non-negative, got {}", self.hardening));
        }
        Ok(())
    }

    /// Voigt stiffness matrix of the elastic part.
    pub fn stiffness(&self) -> Result<Matrix6<f64>> {
        match self.elasticity {
            Elasticity::Isotropic { bulk, shear } => Ok(stiffness_isotropic(bulk, shear)),
            Elasticity::TransverselyIsotropic { young, poisson, poisson_perp } => {
                stiffness_transverse_isotropic(young, poisson, poisson_perp)
            }
        }
    }

    /// Derivative of the stiffness matrix with respect to `id` (zero for
    /// parameters that do not enter elasticity).
    pub fn stiffness_derivative(&self, id: ParamId) -> Result<Matrix6<f64>> {
        match self.elasticity {
            Elasticity::Isotropic { .. } => {
                let [dk, dg] = stiffness_isotropic_derivatives();
                Ok(match id {
                    ParamId::Bulk => dk,
                    ParamId::Shear => dg,
                    _ => Matrix6::zeros(),
                })
            }
            Elasticity::TransverselyIsotropic { young, poisson, poisson_perp } => {
                let [de, dnu, dperp] =
                    stiffness_transverse_isotropic_derivatives(young, poisson, poisson_perp)?;
                Ok(match id {
                    ParamId::Young => de,
                    ParamId::Poisson => dnu,
                    ParamId::PoissonPerp => dperp,
                    _ => Matrix6::zeros(),
                })
            }
        }
    }
}
