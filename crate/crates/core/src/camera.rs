//! Rigid pose plus pinhole intrinsics.
//!
//! Camera space is x right, y down, z forward; a point is in front of the
//! camera when its camera-space z is positive. Projected coordinates are
//! continuous pixel coordinates (pixel `(i, j)` covers `[i, i+1) x [j, j+1)`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{determinant, mat_mul, mat_vec, transpose, Mat3, Vec3};

/// Points closer than this along the optical axis are treated as behind the camera.
pub const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    rotation: Mat3,
    translation: Vec3,
    intrinsics: Intrinsics,
}

/// On-disk pose layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    rotation: [f64; 9],
    translation: [f64; 3],
    focal: f64,
    principal_point: [f64; 2],
    image_size: [usize; 2],
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3, intrinsics: Intrinsics) -> Result<Self> {
        let rtr = mat_mul(&transpose(&rotation), &rotation);
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if !((v - expect).abs() <= 1e-6) {
                    return Err(Error::InvalidPose("rotation is not orthonormal".into()));
                }
            }
        }
        if !((determinant(&rotation) - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidPose("rotation determinant is not +1".into()));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPose("translation is not finite".into()));
        }
        if !(intrinsics.focal.is_finite() && intrinsics.focal > 0.0) {
            return Err(Error::InvalidPose("focal length must be positive".into()));
        }
        if intrinsics.principal_point.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidPose("principal point is not finite".into()));
        }
        if intrinsics.width == 0 || intrinsics.height == 0 {
            return Err(Error::InvalidPose("image size must be positive".into()));
        }
        Ok(Self {
            rotation,
            translation,
            intrinsics,
        })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.intrinsics.width, self.intrinsics.height)
    }

    /// Camera forward axis expressed in object space.
    pub fn view_direction(&self) -> Vec3 {
        let r = &self.rotation;
        [r[2][0], r[2][1], r[2][2]]
    }

    pub fn to_camera(&self, v: Vec3) -> Vec3 {
        let p = mat_vec(&self.rotation, v);
        [
            p[0] + self.translation[0],
            p[1] + self.translation[1],
            p[2] + self.translation[2],
        ]
    }

    /// Projects a camera-space point; `None` when it is not in front of the camera.
    pub fn project_camera(&self, p: Vec3) -> Option<[f64; 2]> {
        if p[2] <= NEAR_PLANE {
            return None;
        }
        let k = &self.intrinsics;
        Some([
            k.focal * p[0] / p[2] + k.principal_point[0],
            k.focal * p[1] / p[2] + k.principal_point[1],
        ])
    }

    pub fn project(&self, v: Vec3) -> Option<[f64; 2]> {
        self.project_camera(self.to_camera(v))
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let f: PoseFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidPose(format!("pose file: {e}")))?;
        let r = f.rotation;
        CameraPose::new(
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            f.translation,
            Intrinsics {
                focal: f.focal,
                principal_point: f.principal_point,
                width: f.image_size[0],
                height: f.image_size[1],
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_json(&text)
    }

    pub fn to_json(&self) -> String {
        let r = &self.rotation;
        let f = PoseFile {
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            translation: self.translation,
            focal: self.intrinsics.focal,
            principal_point: self.intrinsics.principal_point,
            image_size: [self.intrinsics.width, self.intrinsics.height],
        };
        serde_json::to_string_pretty(&f).expect("pose serializes")
    }
}
