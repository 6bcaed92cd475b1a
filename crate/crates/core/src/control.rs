//! Task-space PID with gravity feedforward, distributed onto the cables.

use crate::dynamics::DynamicsParams;
use crate::error::{CdprError, Result};
use crate::geometry::{jacobian, Pose, RobotGeometry, Vec3};
use crate::tension::{distribute, CableTensions, TensionSolution};
use crate::trajectory::{track, ControlInput, Controller, TrajectorySpec};

pub const DEFAULT_INTEGRAL_LIMIT: f64 = 1.0;

/// Per-axis gains: kp in N/m, ki in N/(m s), kd in N s/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: Vec3,
    pub ki: Vec3,
    pub kd: Vec3,
}

impl PidGains {
    pub fn uniform(kp: f64, ki: f64, kd: f64) -> Self {
        Self {
            kp: Vec3::repeat(kp),
            ki: Vec3::repeat(ki),
            kd: Vec3::repeat(kd),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .kp
            .iter()
            .chain(self.ki.iter())
            .chain(self.kd.iter())
            .any(|g| !(*g >= 0.0))
        {
            return Err(CdprError::config("pid", "gains must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    pub integral: Vec3,
    pub prev_error: Vec3,
    pub integral_limit: f64,
}

impl PidState {
    pub fn new(integral_limit: f64) -> Self {
        Self {
            integral: Vec3::zeros(),
            prev_error: Vec3::zeros(),
            integral_limit,
        }
    }
}

/// `F = Kp e + Ki clamp(int e) + Kd (e - e_prev)/dt + feedforward`. The
/// integral is advanced by `e dt` and clamped before use.
pub fn pid_force(gains: &PidGains, state: &PidState, error: &Vec3, dt: f64, feedforward: &Vec3) -> (Vec3, PidState) {
    let lim = state.integral_limit;
    let integral = (state.integral + error * dt).map(|v| v.clamp(-lim, lim));
    let derivative = (error - state.prev_error) / dt;
    let force = gains.kp.component_mul(error)
        + gains.ki.component_mul(&integral)
        + gains.kd.component_mul(&derivative)
        + feedforward;
    (
        force,
        PidState {
            integral,
            prev_error: *error,
            integral_limit: lim,
        },
    )
}

pub fn force_to_tensions(
    geom: &RobotGeometry,
    pose: &Pose,
    desired_force: &Vec3,
    max_tension: f64,
) -> Result<TensionSolution> {
    let jac = jacobian(geom, pose)?;
    Ok(distribute(&jac, desired_force, max_tension))
}

#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: PidGains,
    state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains, integral_limit: f64) -> Self {
        Self {
            gains,
            state: PidState::new(integral_limit),
        }
    }

    pub fn state(&self) -> &PidState {
        &self.state
    }
}

impl Controller for PidController {
    fn label(&self) -> String {
        "pid".into()
    }

    fn reset(&mut self) {
        self.state = PidState::new(self.state.integral_limit);
    }

    fn command(&mut self, input: &ControlInput<'_>) -> Result<CableTensions> {
        let error = input.reference.position - input.state.position;
        let (force, next) = pid_force(
            &self.gains,
            &self.state,
            &error,
            input.params.dt,
            &input.params.weight(),
        );
        self.state = next;
        let sol = force_to_tensions(
            input.geom,
            &Pose::at(input.state.position),
            &force,
            input.params.max_tension,
        )?;
        Ok(sol.tensions)
    }
}

/// Candidate gains, applied uniformly across axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GainGrid {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub ki: Vec<f64>,
}

impl Default for GainGrid {
    fn default() -> Self {
        Self {
            kp: vec![5.0, 15.0, 40.0],
            kd: vec![1.0, 5.0, 15.0],
            ki: vec![0.0, 0.5, 2.0],
        }
    }
}

impl GainGrid {
    /// Candidates ordered by kp, then kd, then ki, ascending.
    pub fn candidates(&self) -> Vec<PidGains> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (kp, kd, ki) = (sorted(&self.kp), sorted(&self.kd), sorted(&self.ki));
        let mut out = Vec::with_capacity(kp.len() * kd.len() * ki.len());
        for p in &kp {
            for d in &kd {
                for i in &ki {
                    out.push(PidGains::uniform(*p, *i, *d));
                }
            }
        }
        out
    }
}

/// Exhaustive grid search for the gains with the lowest RMS tracking error at
/// `params.dt`. Diverged runs are discarded; ties go to the earlier (smaller)
/// candidate.
pub fn tune_gains(
    geom: &RobotGeometry,
    params: &DynamicsParams,
    trajectory: &TrajectorySpec,
    grid: &GainGrid,
    integral_limit: f64,
) -> Result<(PidGains, f64)> {
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(CdprError::config("pid.grid", "empty gain grid"));
    }
    let mut best: Option<(PidGains, f64)> = None;
    for gains in candidates {
        let mut pid = PidController::new(gains, integral_limit);
        let result = track(&mut pid, geom, params, trajectory, params.dt)?;
        if result.diverged {
            continue;
        }
        if best.is_none_or(|(_, rms)| result.rms < rms) {
            best = Some((gains, result.rms));
        }
    }
    best.ok_or(CdprError::AllCandidatesDiverged)
}
