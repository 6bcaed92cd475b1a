//! Reference trajectories, closed-loop tracking and the control-interval sweep.

use std::f64::consts::PI;

use crate::control::{tune_gains, GainGrid, PidController, PidGains};
use crate::dynamics::{step_with_contact, DynamicsParams, EndEffectorState};
use crate::error::{CdprError, Result};
use crate::geometry::{jacobian, Pose, RobotGeometry, Vec3};
use crate::rl::policy::{Policy, PolicyController};
use crate::tension::{distribute, CableTensions};

/// Tracking error beyond which a run counts as diverged, m.
pub const DIVERGENCE_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    Circle,
    SpiralRising,
    SpiralShrinking,
}

impl TrajectoryKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::Circle => "circle",
            TrajectoryKind::SpiralRising => "spiral1",
            TrajectoryKind::SpiralShrinking => "spiral2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub center: Vec3,
    pub radius: f64,
    pub period: f64,
    /// z_rate for the rising spiral, radius_rate for the shrinking one, m/s.
    pub rate: f64,
    pub duration: f64,
}

impl TrajectorySpec {
    pub fn circle() -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            center: Vec3::new(1.155, 1.405, 1.2),
            radius: 0.5,
            period: 20.0,
            rate: 0.0,
            duration: 40.0,
        }
    }

    pub fn spiral_rising() -> Self {
        Self {
            kind: TrajectoryKind::SpiralRising,
            rate: 0.02,
            ..Self::circle()
        }
    }

    pub fn spiral_shrinking() -> Self {
        Self {
            kind: TrajectoryKind::SpiralShrinking,
            rate: 0.01,
            ..Self::circle()
        }
    }

    /// `circle`, `spiral1` (rising) or `spiral2` (shrinking).
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "circle" => Some(Self::circle()),
            "spiral1" | "spiral_rising" => Some(Self::spiral_rising()),
            "spiral2" | "spiral_shrinking" => Some(Self::spiral_shrinking()),
            _ => None,
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::circle(), Self::spiral_rising(), Self::spiral_shrinking()]
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Exact position and velocity at time `t`.
    pub fn sample(&self, t: f64) -> ReferencePoint {
        let omega = 2.0 * PI / self.period;
        let (s, c) = (omega * t).sin_cos();
        let (r, dr, dz) = match self.kind {
            TrajectoryKind::Circle => (self.radius, 0.0, 0.0),
            TrajectoryKind::SpiralRising => (self.radius, 0.0, self.rate),
            TrajectoryKind::SpiralShrinking => {
                let r = self.radius - self.rate * t;
                if r > 0.0 {
                    (r, -self.rate, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        };
        let position = self.center + Vec3::new(r * c, r * s, dz * t);
        let velocity = Vec3::new(dr * c - r * omega * s, dr * s + r * omega * c, dz);
        ReferencePoint {
            time: t,
            position,
            velocity,
        }
    }

    /// Number of control steps covering the duration at interval `dt`.
    pub fn steps(&self, dt: f64) -> usize {
        (self.duration / dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub time: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

/// Samples at `t = k dt` for `k = 0 .. duration/dt`.
pub fn generate(spec: &TrajectorySpec, dt: f64, geom: &RobotGeometry) -> Result<Vec<ReferencePoint>> {
    if !(dt > 0.0) {
        return Err(CdprError::config("dt", "must be positive"));
    }
    if !(spec.duration >= dt) {
        return Err(CdprError::config("trajectory.duration", "must be at least one step"));
    }
    // one extra sample so the last step has a look-ahead point
    (0..=spec.steps(dt))
        .map(|k| {
            let p = spec.sample(k as f64 * dt);
            if geom.workspace_contains(&p.position) {
                Ok(p)
            } else {
                Err(CdprError::TrajectoryLeavesWorkspace { time: p.time })
            }
        })
        .collect()
}

/// What a controller sees at each control step.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub geom: &'a RobotGeometry,
    pub params: &'a DynamicsParams,
    pub state: &'a EndEffectorState,
    pub reference: &'a ReferencePoint,
    /// Reference one control interval ahead.
    pub next_reference: &'a ReferencePoint,
}

pub trait Controller {
    fn label(&self) -> String;

    fn reset(&mut self) {}

    fn command(&mut self, input: &ControlInput<'_>) -> Result<CableTensions>;
}

/// Applies the tensions that land exactly on the next reference point under
/// the integrator, when they are feasible. Used to validate the harness.
#[derive(Debug, Default, Clone, Copy)]
pub struct InverseDynamicsController;

impl Controller for InverseDynamicsController {
    fn label(&self) -> String {
        "inverse_dynamics".into()
    }

    fn command(&mut self, input: &ControlInput<'_>) -> Result<CableTensions> {
        let dt = input.params.dt;
        let s = input.state;
        // semi-implicit Euler: c' = c + (v + a dt) dt
        let accel = ((input.next_reference.position - s.position) / dt - s.velocity) / dt;
        let force = (accel + Vec3::new(0.0, 0.0, input.params.gravity)) * input.params.mass;
        let jac = jacobian(input.geom, &Pose::at(s.position))?;
        Ok(distribute(&jac, &force, input.params.max_tension).tensions)
    }
}

/// Outputs zero tension on every cable.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn label(&self) -> String {
        "zero".into()
    }

    fn command(&mut self, _: &ControlInput<'_>) -> Result<CableTensions> {
        Ok(CableTensions::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub controller: String,
    pub trajectory: String,
    pub dt: f64,
    pub times: Vec<f64>,
    pub reference: Vec<Vec3>,
    pub actual: Vec<Vec3>,
    pub errors: Vec<f64>,
    pub rms: f64,
    pub diverged: bool,
}

pub fn rms_error(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(CdprError::EmptySequence);
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Closed-loop run over the whole trajectory, starting on the path with the
/// reference velocity. A run diverges when the error exceeds
/// [`DIVERGENCE_THRESHOLD`] or the end effector is driven into the workspace
/// boundary. The whole duration is always simulated and recorded; the RMS
/// covers the steps before divergence.
pub fn track(
    controller: &mut dyn Controller,
    geom: &RobotGeometry,
    params: &DynamicsParams,
    spec: &TrajectorySpec,
    dt: f64,
) -> Result<TrackingResult> {
    let params = params.with_dt(dt);
    params.validate()?;
    let refs = generate(spec, dt, geom)?;
    let n = refs.len() - 1;
    controller.reset();

    let mut state = EndEffectorState {
        position: refs[0].position,
        velocity: refs[0].velocity,
    };
    let mut result = TrackingResult {
        controller: controller.label(),
        trajectory: spec.name().to_string(),
        dt,
        times: Vec::with_capacity(n),
        reference: Vec::with_capacity(n),
        actual: Vec::with_capacity(n),
        errors: Vec::with_capacity(n),
        rms: 0.0,
        diverged: false,
    };
    // Steps counted in the RMS; fixed at the first sign of divergence.
    let mut counted = None;
    for k in 0..n {
        let error = (state.position - refs[k].position).norm();
        if counted.is_none() && !(error <= DIVERGENCE_THRESHOLD) {
            counted = Some(k);
        }
        result.times.push(refs[k].time);
        result.reference.push(refs[k].position);
        result.actual.push(state.position);
        result.errors.push(error);
        if k + 1 == n {
            break;
        }
        let input = ControlInput {
            geom,
            params: &params,
            state: &state,
            reference: &refs[k],
            next_reference: &refs[k + 1],
        };
        let tensions = controller.command(&input)?;
        let tensions = CableTensions(tensions.0.map(|t| t.clamp(0.0, params.max_tension)));
        let outcome = step_with_contact(geom, &params, &state, &tensions)?;
        if counted.is_none() && outcome.contact {
            counted = Some(k + 1);
        }
        state = outcome.state;
    }
    result.diverged = counted.is_some();
    result.rms = rms_error(&result.errors[..counted.unwrap_or(n).max(1)])?;
    Ok(result)
}

/// A controller entry in a control-interval sweep.
#[derive(Debug, Clone)]
pub enum SweepController {
    /// PID re-tuned on the grid at every interval.
    Pid {
        grid: GainGrid,
        integral_limit: f64,
    },
    /// PID with fixed gains at every interval.
    FixedPid {
        gains: PidGains,
        integral_limit: f64,
    },
    Policy {
        label: String,
        policy: Policy,
    },
}

impl SweepController {
    pub fn label(&self) -> String {
        match self {
            SweepController::Pid { .. } | SweepController::FixedPid { .. } => "pid".into(),
            SweepController::Policy { label, .. } => label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub controller: String,
    pub dt: f64,
    pub rms: f64,
    pub diverged: bool,
    pub gains: Option<PidGains>,
}

/// Tracks `spec` with every controller at every interval. Rows are ordered
/// by controller label, then interval.
pub fn dt_sweep(
    controllers: &[SweepController],
    geom: &RobotGeometry,
    params: &DynamicsParams,
    spec: &TrajectorySpec,
    dt_list: &[f64],
) -> Result<Vec<SweepRow>> {
    if dt_list.is_empty() {
        return Err(CdprError::config("dt", "empty interval list"));
    }
    let mut rows = Vec::with_capacity(controllers.len() * dt_list.len());
    for entry in controllers {
        for &dt in dt_list {
            let at_dt = params.with_dt(dt);
            let (result, gains) = match entry {
                SweepController::Pid { grid, integral_limit } => {
                    match tune_gains(geom, &at_dt, spec, grid, *integral_limit) {
                        Ok((gains, _)) => {
                            let mut pid = PidController::new(gains, *integral_limit);
                            (track(&mut pid, geom, &at_dt, spec, dt)?, Some(gains))
                        }
                        Err(CdprError::AllCandidatesDiverged) => {
                            rows.push(SweepRow {
                                controller: entry.label(),
                                dt,
                                rms: f64::NAN,
                                diverged: true,
                                gains: None,
                            });
                            continue;
                        }
                        Err(e) => return Err(e),
                    }
                }
                SweepController::FixedPid { gains, integral_limit } => {
                    let mut pid = PidController::new(*gains, *integral_limit);
                    (track(&mut pid, geom, &at_dt, spec, dt)?, Some(*gains))
                }
                SweepController::Policy { policy, .. } => {
                    let mut ctrl = PolicyController::new(policy.clone());
                    (track(&mut ctrl, geom, &at_dt, spec, dt)?, None)
                }
            };
            rows.push(SweepRow {
                controller: entry.label(),
                dt,
                rms: result.rms,
                diverged: result.diverged,
                gains,
            });
        }
    }
    rows.sort_by(|a, b| a.controller.cmp(&b.controller).then(a.dt.total_cmp(&b.dt)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_landmarks() {
        let c = TrajectorySpec::circle();
        let p0 = c.sample(0.0).position;
        assert!((p0 - (c.center + Vec3::new(0.5, 0.0, 0.0))).norm() < 1e-15);
        let ph = c.sample(c.period / 2.0).position;
        assert!((ph - (c.center + Vec3::new(-0.5, 0.0, 0.0))).norm() < 1e-12);
    }

    #[test]
    fn rising_spiral_climbs_one_period() {
        let s = TrajectorySpec::spiral_rising();
        let a = s.sample(3.0).position;
        let b = s.sample(3.0 + s.period).position;
        assert!((b.z - a.z - s.rate * s.period).abs() < 1e-12);
        assert!((b.xy() - a.xy()).norm() < 1e-12);
    }

    #[test]
    fn velocities_match_position_differences() {
        for spec in TrajectorySpec::all() {
            let h = 1e-4;
            for k in 0..40 {
                let t = 0.37 + k as f64 * 0.9;
                let fd = (spec.sample(t + h).position - spec.sample(t - h).position) / (2.0 * h);
                assert!((fd - spec.sample(t).velocity).norm() < 1e-7, "{} at {t}", spec.name());
            }
        }
    }

    #[test]
    fn rms_examples() {
        assert!((rms_error(&[0.3, 0.4]).unwrap() - 0.125f64.sqrt()).abs() < 1e-15);
        assert_eq!(rms_error(&[0.0; 5]).unwrap(), 0.0);
        assert!((rms_error(&[0.7; 9]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(rms_error(&[]), Err(CdprError::EmptySequence));
    }

    #[test]
    fn generate_rejects_paths_outside_workspace() {
        let geom = RobotGeometry::default();
        let mut spec = TrajectorySpec::circle();
        spec.radius = 1.0;
        assert!(matches!(
            generate(&spec, 0.1, &geom),
            Err(CdprError::TrajectoryLeavesWorkspace { .. })
        ));
        assert_eq!(generate(&TrajectorySpec::circle(), 0.1, &geom).unwrap().len(), 401);
    }

    #[test]
    fn inverse_dynamics_tracks_exactly() {
        let geom = RobotGeometry::default();
        let params = DynamicsParams::default();
        for spec in TrajectorySpec::all() {
            let r = track(&mut InverseDynamicsController, &geom, &params, &spec, 0.01).unwrap();
            assert!(!r.diverged);
            assert_eq!(r.errors.len(), 4000);
            assert!(r.rms < 1e-6, "{}: {}", spec.name(), r.rms);
        }
    }

    #[test]
    fn zero_controller_falls_off() {
        let geom = RobotGeometry::default();
        let r = track(
            &mut ZeroController,
            &geom,
            &DynamicsParams::default(),
            &TrajectorySpec::circle(),
            0.1,
        )
        .unwrap();
        assert!(r.diverged);
        assert_eq!(r.errors.len(), 400);
        let before = r.errors.iter().take_while(|e| **e < 1.0).count();
        assert!(before < 400);
    }
}
