//! Point-mass dynamics of the end effector.
//!
//! Each cable pulls the end effector toward its anchor with force `t_i`, so
//! the net acceleration is `a = -J^T t / m - g e_z`. States advance with
//! semi-implicit Euler, then the position is clamped into the workspace box
//! and the velocity component into any face that was hit is zeroed.

use crate::error::{CdprError, Result};
use crate::geometry::{jacobian, Pose, RobotGeometry, Vec3};
use crate::tension::{distribute, CableTensions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsParams {
    /// kg
    pub mass: f64,
    /// m/s^2, acting along -z
    pub gravity: f64,
    /// s
    pub dt: f64,
    /// N, per cable
    pub max_tension: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            dt: 0.1,
            max_tension: 20.0,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("dynamics.mass", self.mass),
            ("dynamics.gravity", self.gravity),
            ("dynamics.dt", self.dt),
            ("dynamics.max_tension", self.max_tension),
        ];
        for (key, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CdprError::config(key, "must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Force needed to hold the mass against gravity.
    pub fn weight(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.mass * self.gravity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffectorState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl EndEffectorState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
        }
    }
}

/// Result of one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EndEffectorState,
    /// True when the workspace clamp was engaged on this step.
    pub contact: bool,
}

pub fn acceleration(
    geom: &RobotGeometry,
    params: &DynamicsParams,
    state: &EndEffectorState,
    tensions: &CableTensions,
) -> Result<Vec3> {
    let jac = jacobian(geom, &Pose::at(state.position))?;
    let pull = -jac.transpose_mul(tensions.as_array());
    Ok(pull / params.mass - Vec3::new(0.0, 0.0, params.gravity))
}

pub fn step(
    geom: &RobotGeometry,
    params: &DynamicsParams,
    state: &EndEffectorState,
    tensions: &CableTensions,
) -> Result<EndEffectorState> {
    step_with_contact(geom, params, state, tensions).map(|o| o.state)
}

pub fn step_with_contact(
    geom: &RobotGeometry,
    params: &DynamicsParams,
    state: &EndEffectorState,
    tensions: &CableTensions,
) -> Result<StepOutcome> {
    let a = acceleration(geom, params, state, tensions)?;
    let mut velocity = state.velocity + a * params.dt;
    let unclamped = state.position + velocity * params.dt;
    let position = geom.clamp_to_workspace(&unclamped);
    let mut contact = false;
    for k in 0..3 {
        if position[k] != unclamped[k] {
            velocity[k] = 0.0;
            contact = true;
        }
    }
    Ok(StepOutcome {
        state: EndEffectorState { position, velocity },
        contact,
    })
}

/// Nonnegative, bounded tensions that best hold the mass still at `position`.
pub fn static_equilibrium_tensions(
    geom: &RobotGeometry,
    params: &DynamicsParams,
    position: &Vec3,
) -> Result<(CableTensions, f64)> {
    let jac = jacobian(geom, &Pose::at(*position))?;
    let sol = distribute(&jac, &params.weight(), params.max_tension);
    if sol.residual > 1e-6 * params.mass * params.gravity {
        return Err(CdprError::InfeasibleEquilibrium { residual: sol.residual });
    }
    Ok((sol.tensions, sol.residual))
}
