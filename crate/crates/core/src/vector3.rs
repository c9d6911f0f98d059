//! Decay-free vector picture of the resonant three-level system: the state
//! rides on a unit vector in (a, b, c) space and the two fields act as one
//! fixed rotation axis. Exact by construction, which makes this the
//! independent oracle for the zero-decay limit of the integrator.

use nalgebra::{Rotation3, Unit, Vector3};
use thiserror::Error;

use crate::model::{Angular, LambdaParams};

#[derive(Debug, Error, PartialEq)]
pub enum Vector3Error {
    #[error("not a unit vector: |v| = {0}")]
    NotUnit(f64),
}

/// Real state vector (v_a, v_b, v_c); the atomic amplitudes are
/// (v_a, v_b, -i v_c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector3 {
    pub v_a: f64,
    pub v_b: f64,
    pub v_c: f64,
}

impl StateVector3 {
    pub fn new(v_a: f64, v_b: f64, v_c: f64) -> Result<Self, Vector3Error> {
        let norm = (v_a * v_a + v_b * v_b + v_c * v_c).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Vector3Error::NotUnit(norm));
        }
        Ok(StateVector3 { v_a, v_b, v_c })
    }

    pub fn norm(&self) -> f64 {
        (self.v_a * self.v_a + self.v_b * self.v_b + self.v_c * self.v_c).sqrt()
    }
}

/// Both fields as one rotation axis, (-om2/2, om1/2, 0) in angular units.
#[derive(Debug, Clone, Copy)]
pub struct RabiVector {
    axis: Vector3<f64>,
}

impl RabiVector {
    pub fn new(params: &LambdaParams) -> Self {
        let k = Angular::from(params);
        RabiVector { axis: Vector3::new(-0.5 * k.om2, 0.5 * k.om1, 0.0) }
    }

    pub fn components(&self) -> (f64, f64, f64) {
        (self.axis.x, self.axis.y, self.axis.z)
    }

    /// Rotation rate (angular): sqrt(om1^2 + om2^2) / 2.
    pub fn magnitude(&self) -> f64 {
        self.axis.norm()
    }

    /// Tilt of the axis away from b, theta = atan(om2 / om1).
    pub fn theta(&self) -> f64 {
        (-self.axis.x).atan2(self.axis.y)
    }

    /// Cone solution for a state starting along +b (half angle theta).
    pub fn case_b(&self, t: f64) -> StateVector3 {
        let (s, c) = self.theta().sin_cos();
        let phi = self.magnitude() * t;
        StateVector3 {
            v_a: s * c * (phi.cos() - 1.0),
            v_b: c * c + s * s * phi.cos(),
            v_c: -s * phi.sin(),
        }
    }

    /// Cone solution for a state starting along +a (half angle pi/2 - theta).
    pub fn case_a(&self, t: f64) -> StateVector3 {
        let (s, c) = self.theta().sin_cos();
        let phi = self.magnitude() * t;
        StateVector3 {
            v_a: 1.0 + (phi.cos() - 1.0) * c * c,
            v_b: c * s * (phi.cos() - 1.0),
            v_c: -c * phi.sin(),
        }
    }
}

/// Closed-form rotation of `v0` about the Rabi axis by angle `|omega| t`;
/// no integration involved.
pub fn precess(v0: &StateVector3, omega: &RabiVector, t: f64) -> StateVector3 {
    let mag = omega.magnitude();
    if mag == 0.0 {
        return *v0;
    }
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(omega.axis), mag * t);
    let v = rot * Vector3::new(v0.v_a, v0.v_b, v0.v_c);
    StateVector3 { v_a: v.x, v_b: v.y, v_c: v.z }
}

/// Probe response of a single state vector: Im rho_bc = v_b v_c, negative
/// for absorption.
pub fn im_rbc_of(v: &StateVector3) -> f64 {
    v.v_b * v.v_c
}

/// Probe response of an even a/b population mixture: the mean over the two
/// cone solutions. The half-frequency terms cancel exactly, leaving
/// -(sin(theta)/4) sin(2 Omega t). Cyclic inputs.
pub fn averaged_fast_oscillation(omega1: f64, omega2: f64, t: f64) -> f64 {
    let rv = RabiVector::new(&LambdaParams::symmetric(omega1, omega2, 0.0));
    0.5 * (im_rbc_of(&rv.case_a(t)) + im_rbc_of(&rv.case_b(t)))
}
