//! Forward simulation of the synthetic specimen.
//!
//! Symmetric tensors are stored as 6-vectors in Voigt order
//! `(11, 22, 33, 23, 13, 12)`. Strain vectors carry engineering shear
//! components (`gamma_ij = 2 eps_ij`), so `sigma . eps` is the work density.

mod elasticity;
mod params;
mod return_map;
mod yield_surface;

pub use elasticity::{
    isotropic_vol_dev_response, stiffness_isotropic, stiffness_isotropic_derivatives,
    stiffness_transverse_isotropic, stiffness_transverse_isotropic_derivatives,
};
pub use params::{Elasticity, ModelParams, ParamId};
pub use return_map::{
    integrate_step, integrate_step_with, sensitivities, sensitivities_fd, step_with_sensitivities,
    step_with_tangent, HIDDEN_DIM,
    MaterialState, ReturnMapOptions, SensitivityMethod, StepKind, StepMode, StepResult,
};
pub use yield_surface::{hill_equivalent, hill_gradient, hill_matrix, yield_value};

use nalgebra::Vector6;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Raw Voigt 6-vector.
pub type Voigt = Vector6<f64>;

/// Component labels in storage order.
pub const VOIGT_LABELS: [&str; 6] = ["11", "22", "33", "23", "13", "12"];

/// Index of a tensor component `(i, j)` (1-based) in Voigt storage.
pub fn voigt_index(i: usize, j: usize) -> Option<usize> {
    match (i.min(j), i.max(j)) {
        (1, 1) => Some(0),
        (2, 2) => Some(1),
        (3, 3) => Some(2),
        (2, 3) => Some(3),
        (1, 3) => Some(4),
        (1, 2) => Some(5),
        _ => None,
    }
}

macro_rules! voigt_newtype {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Default)]
        pub struct $name(pub Voigt);

        impl $name {
            pub fn zeros() -> Self {
                Self(Voigt::zeros())
            }

            pub fn from_array(a: [f64; 6]) -> Self {
                Self(Voigt::from_column_slice(&a))
            }

            pub fn to_array(&self) -> [f64; 6] {
                let mut a = [0.0; 6];
                a.copy_from_slice(self.0.as_slice());
                a
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl Add for $name {
            type Output = Self;
            fn add(self, rhs: Self) -> Self {
                Self(self.0 + rhs.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: Self) {
                self.0 += rhs.0;
            }
        }

        impl Sub for $name {
            type Output = Self;
            fn sub(self, rhs: Self) -> Self {
                Self(self.0 - rhs.0)
            }
        }

        impl Neg for $name {
            type Output = Self;
            fn neg(self) -> Self {
                Self(-self.0)
            }
        }

        impl Mul<f64> for $name {
            type Output = Self;
            fn mul(self, rhs: f64) -> Self {
                Self(self.0 * rhs)
            }
        }
    };
}

voigt_newtype!(Strain);
voigt_newtype!(Stress);

impl Strain {
    /// Trace of the strain tensor.
    pub fn volumetric(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }
}

impl Stress {
    /// Mean normal stress, `tr(sigma) / 3`.
    pub fn mean(&self) -> f64 {
        (self.0[0] + self.0[1] + self.0[2]) / 3.0
    }
}
