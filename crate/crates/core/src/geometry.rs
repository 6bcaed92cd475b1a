//! Cable geometry of the 4-cable suspended robot.
//!
//! Each cable runs from a fixed anchor `a_i` on the top of the frame to the
//! end effector. With the end effector at `c` and orientation `R`, the cable
//! vector is
//!
//! ```text
//! l_i = c - a_i + R * b_i
//! ```
//!
//! where `b_i` is the attachment point on the body. The end effector is a
//! point mass here, so `b_i = 0` and `R = I`. The cable Jacobian stacks the
//! unit vectors `S_i = l_i / |l_i|` as rows; each row is the gradient of the
//! cable length with respect to `c`, and `J^T` maps cable tensions to the
//! task-space force magnitude along those directions.

use nalgebra::{Matrix3, Vector3};

use crate::error::{CdprError, Result};

pub type Vec3 = Vector3<f64>;

pub const NUM_CABLES: usize = 4;

/// Below this cable length the end effector is treated as sitting on an anchor.
pub const LENGTH_EPSILON: f64 = 1e-9;

pub const FRAME_WIDTH: f64 = 2.31;
pub const FRAME_DEPTH: f64 = 2.81;
pub const FRAME_HEIGHT: f64 = 3.22;

#[derive(Debug, Clone, PartialEq)]
pub struct RobotGeometry {
    anchors: [Vec3; NUM_CABLES],
    attachment_offsets: [Vec3; NUM_CABLES],
    workspace_min: Vec3,
    workspace_max: Vec3,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self::from_frame(
            FRAME_WIDTH,
            FRAME_DEPTH,
            FRAME_HEIGHT,
            Vec3::new(0.3, 0.3, 0.3),
            Vec3::new(2.01, 2.51, 2.5),
        )
        .expect("default geometry is valid")
    }
}

impl RobotGeometry {
    /// Anchors at the four top corners of a `width x depth` frame, ordered
    /// counterclockwise from the origin.
    pub fn from_frame(width: f64, depth: f64, height: f64, workspace_min: Vec3, workspace_max: Vec3) -> Result<Self> {
        let anchors = [
            Vec3::new(0.0, 0.0, height),
            Vec3::new(width, 0.0, height),
            Vec3::new(width, depth, height),
            Vec3::new(0.0, depth, height),
        ];
        Self::new(anchors, workspace_min, workspace_max)
    }

    pub fn new(anchors: [Vec3; NUM_CABLES], workspace_min: Vec3, workspace_max: Vec3) -> Result<Self> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !anchors.iter().all(finite) || !finite(&workspace_min) || !finite(&workspace_max) {
            return Err(CdprError::config("geometry", "coordinates must be finite"));
        }
        let height = anchors[0].z;
        if anchors.iter().any(|a| a.z != height) {
            return Err(CdprError::config("geometry", "all anchors must share one height"));
        }
        if (0..3).any(|k| workspace_min[k] >= workspace_max[k]) {
            return Err(CdprError::config(
                "geometry.workspace",
                "workspace_min must be below workspace_max on every axis",
            ));
        }
        if workspace_max.z >= height {
            return Err(CdprError::config(
                "geometry.workspace_max_z",
                "workspace must lie strictly below the anchors",
            ));
        }
        Ok(Self {
            anchors,
            attachment_offsets: [Vec3::zeros(); NUM_CABLES],
            workspace_min,
            workspace_max,
        })
    }

    pub fn anchors(&self) -> &[Vec3; NUM_CABLES] {
        &self.anchors
    }

    pub fn anchor(&self, i: usize) -> Vec3 {
        self.anchors[i]
    }

    pub fn attachment_offsets(&self) -> &[Vec3; NUM_CABLES] {
        &self.attachment_offsets
    }

    pub fn workspace_min(&self) -> Vec3 {
        self.workspace_min
    }

    pub fn workspace_max(&self) -> Vec3 {
        self.workspace_max
    }

    pub fn workspace_center(&self) -> Vec3 {
        (self.workspace_min + self.workspace_max) * 0.5
    }

    pub fn workspace_diagonal(&self) -> f64 {
        (self.workspace_max - self.workspace_min).norm()
    }

    /// Length of the diagonal of the bounding box spanned by the floor and the anchors.
    pub fn frame_diagonal(&self) -> f64 {
        let (mut lo, mut hi) = (self.anchors[0], self.anchors[0]);
        for a in &self.anchors[1..] {
            lo = lo.inf(a);
            hi = hi.sup(a);
        }
        let span = hi - lo;
        Vec3::new(span.x, span.y, hi.z).norm()
    }

    /// Closed-box membership test.
    pub fn workspace_contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.workspace_min[k] && p[k] <= self.workspace_max[k])
    }

    pub fn clamp_to_workspace(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.workspace_min).inf(&self.workspace_max)
    }
}

/// End-effector pose. Orientation stays the identity for the point-mass model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Matrix3<f64>,
}

impl Pose {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            orientation: Matrix3::identity(),
        }
    }
}

/// Rows are the unit cable directions `S_i`, pointing from anchor to end effector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian4x3 {
    pub rows: [Vec3; NUM_CABLES],
}

impl Jacobian4x3 {
    /// `J^T t`: sum of the cable directions weighted by `t`.
    pub fn transpose_mul(&self, t: &[f64; NUM_CABLES]) -> Vec3 {
        self.rows
            .iter()
            .zip(t)
            .fold(Vec3::zeros(), |acc, (s, ti)| acc + s * *ti)
    }

    /// `J v`: rate of change of each cable length for end-effector velocity `v`.
    pub fn mul(&self, v: &Vec3) -> [f64; NUM_CABLES] {
        std::array::from_fn(|i| self.rows[i].dot(v))
    }
}

pub fn cable_vectors(geom: &RobotGeometry, pose: &Pose) -> [Vec3; NUM_CABLES] {
    std::array::from_fn(|i| pose.position - geom.anchors[i] + pose.orientation * geom.attachment_offsets[i])
}

pub fn cable_lengths(geom: &RobotGeometry, pose: &Pose) -> [f64; NUM_CABLES] {
    cable_vectors(geom, pose).map(|l| l.norm())
}

pub fn jacobian(geom: &RobotGeometry, pose: &Pose) -> Result<Jacobian4x3> {
    let vectors = cable_vectors(geom, pose);
    let mut rows = [Vec3::zeros(); NUM_CABLES];
    for (i, l) in vectors.iter().enumerate() {
        let length = l.norm();
        if !(length >= LENGTH_EPSILON) {
            return Err(CdprError::DegenerateConfiguration { cable: i, length });
        }
        rows[i] = l / length;
    }
    Ok(Jacobian4x3 { rows })
}
