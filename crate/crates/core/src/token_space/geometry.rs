//! The sparse structures the codec understands.

use crate::error::{Error, Result};

/// Number of keypoints per person.
pub const KEYPOINT_COUNT: usize = 17;

/// A 2D point in normalized `[y, x]` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub y: f64,
    pub x: f64,
}

impl Point2D {
    pub fn new(y: f64, x: f64) -> Result<Self> {
        let p = Point2D { y, x };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("y", self.y)?;
        check_unit("x", self.x)
    }
}

/// An axis-aligned box `[y1, x1, y2, x2]` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub y1: f64,
    pub x1: f64,
    pub y2: f64,
    pub x2: f64,
}

impl Box2D {
    pub fn new(y1: f64, x1: f64, y2: f64, x2: f64) -> Result<Self> {
        let b = Box2D { y1, x1, y2, x2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("y1", self.y1)?;
        check_unit("x1", self.x1)?;
        check_unit("y2", self.y2)?;
        check_unit("x2", self.x2)?;
        if self.y1 > self.y2 || self.x1 > self.x2 {
            return Err(Error::Validation(format!(
                "box corners out of order: [{}, {}, {}, {}]",
                self.y1, self.x1, self.y2, self.x2
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.y2 - self.y1) * (self.x2 - self.x1)
    }
}

/// Camera viewpoint: polar angle, azimuth angle, distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Polar angle in radians, within [-pi, pi].
    pub theta: f64,
    /// Azimuth angle in radians, within [-pi, pi].
    pub phi: f64,
    /// Distance from the target, >= 0 (scene units).
    pub r: f64,
}

impl CameraPose {
    pub fn new(theta: f64, phi: f64, r: f64) -> Result<Self> {
        let p = CameraPose { theta, phi, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_angle("theta", self.theta)?;
        check_angle("phi", self.phi)?;
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::range("r", self.r, 0.0, f64::INFINITY));
        }
        Ok(())
    }
}

/// A 3D cuboid: projected center relative to its 2D RoI, virtual depth,
/// log-normalized dimensions, and a continuous 6D allocentric rotation.
/// Encodes to exactly 12 tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Cuboid3D {
    /// Projected 3D center on the image plane, normalized to [0, 1].
    pub u: f64,
    pub v: f64,
    /// Virtual center depth in meters, > 0.
    pub z: f64,
    /// Log-normalized physical dimensions.
    pub w_bar: f64,
    pub h_bar: f64,
    pub l_bar: f64,
    /// Continuous 6D allocentric rotation, each component in [-1, 1].
    pub rotation: [f64; 6],
}

impl Cuboid3D {
    pub fn validate(&self) -> Result<()> {
        check_unit("u", self.u)?;
        check_unit("v", self.v)?;
        if !self.z.is_finite() || self.z <= 0.0 {
            return Err(Error::range("z", self.z, f64::MIN_POSITIVE, f64::INFINITY));
        }
        for (name, v) in [
            ("w_bar", self.w_bar),
            ("h_bar", self.h_bar),
            ("l_bar", self.l_bar),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

/// One person's keypoints: the query box plus 17 fixed-order entries, each
/// either a visible point or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub person_box: Box2D,
    pub keypoints: [Option<Point2D>; KEYPOINT_COUNT],
}

impl KeypointSet {
    pub fn new(person_box: Box2D, keypoints: [Option<Point2D>; KEYPOINT_COUNT]) -> Result<Self> {
        let k = KeypointSet {
            person_box,
            keypoints,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        self.person_box.validate()?;
        for p in self.keypoints.iter().flatten() {
            p.validate()?;
        }
        Ok(())
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_some()).count()
    }
}

/// A robot action: either a discrete text command or continuous deltas with
/// an optional gripper state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionCommand {
    /// Text command emitted verbatim through the tokenizer ("stop", "forward", ...).
    Discrete(String),
    /// Continuous control: up to 6 deltas (position x3, rotation x3) plus gripper.
    Continuous {
        deltas: Vec<f64>,
        /// `Some(true)` = open, `Some(false)` = closed.
        gripper: Option<bool>,
    },
}

/// Tagged union over every structure the codec can round-trip.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometricEntity {
    Point(Point2D),
    Box(Box2D),
    Cuboid(Cuboid3D),
    Pose(CameraPose),
    Keypoints(KeypointSet),
    Action(ActionCommand),
}

impl GeometricEntity {
    /// The schema `kind` tag for this entity.
    pub fn kind(&self) -> &'static str {
        match self {
            GeometricEntity::Point(_) => "point",
            GeometricEntity::Box(_) => "box",
            GeometricEntity::Cuboid(_) => "cuboid",
            GeometricEntity::Pose(_) => "pose",
            GeometricEntity::Keypoints(_) => "keypoints",
            GeometricEntity::Action(_) => "action",
        }
    }
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v <= 1.0) {
        return Err(Error::range(name, v, 0.0, 1.0));
    }
    Ok(())
}

fn check_angle(name: &'static str, v: f64) -> Result<()> {
    if !(v >= -std::f64::consts::PI && v <= std::f64::consts::PI) {
        return Err(Error::range(
            name,
            v,
            -std::f64::consts::PI,
            std::f64::consts::PI,
        ));
    }
    Ok(())
}
