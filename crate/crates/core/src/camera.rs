//! Pinhole camera with a rigid world-to-camera transform.
//!
//! Camera space is right-handed with `+x` right, `+y` up and the camera looking
//! down `-z`, so a point in front of the camera has depth `-z > 0`. Image
//! coordinates put pixel `(x, y)` at the continuous center `(x + 0.5, y + 0.5)`
//! with `y` growing downward.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const DEFAULT_NEAR_CLIP: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near_clip: f64,
}

impl Camera {
    pub fn new(
        focal: [f64; 2],
        principal: [f64; 2],
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self { focal, principal, width, height, rotation, translation, near_clip: DEFAULT_NEAR_CLIP };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, principal point at the image center.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: usize, height: usize) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = Vector3::from(target) - eye;
        if forward.norm() == 0.0 {
            return Err(Error::invalid("camera eye coincides with its target"));
        }
        let forward = forward.normalize();
        let right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            return Err(Error::invalid("camera up vector is parallel to the view direction"));
        }
        let right = right.normalize();
        let cam_up = right.cross(&forward);
        let back = -forward;
        let rotation = Matrix3::from_rows(&[right.transpose(), cam_up.transpose(), back.transpose()]);
        let translation = -(rotation * eye);
        Self::new([focal, focal], [width as f64 / 2.0, height as f64 / 2.0], width, height, rotation, translation)
    }

    pub fn with_near_clip(mut self, near_clip: f64) -> Result<Self> {
        self.near_clip = near_clip;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near_clip > 0.0) {
            return Err(Error::invalid("near_clip must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera resolution must be at least 1x1"));
        }
        if self.focal.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || !(self.rotation.determinant() > 0.0) {
            return Err(Error::invalid("camera rotation is not orthonormal"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("camera translation is not finite"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Same pose at `scale` times the resolution; intrinsics follow the rounded size.
    pub fn scaled(&self, scale: f64) -> Camera {
        if scale == 1.0 {
            return self.clone();
        }
        let width = ((self.width as f64 * scale).round() as usize).max(1);
        let height = ((self.height as f64 * scale).round() as usize).max(1);
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            focal: [self.focal[0] * sx, self.focal[1] * sy],
            principal: [self.principal[0] * sx, self.principal[1] * sy],
            width,
            height,
            ..self.clone()
        }
    }

    /// Applies the world-space rigid motion `x -> r x + t` to the scene this camera sees,
    /// returning the camera that observes the moved scene identically.
    pub fn moved_with_world(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Camera {
        let rotation = self.rotation * r.transpose();
        let translation = self.translation - rotation * t;
        Camera { rotation, translation, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at([3.0, 1.0, 2.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 100.0, 64, 48).unwrap();
        let p = cam.world_to_camera(&Vector3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z + 14f64.sqrt()).abs() < 1e-12);
        assert!((cam.center() - Vector3::new(3.0, 1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let r = Matrix3::identity() * 1.01;
        assert!(Camera::new([1.0, 1.0], [0.0, 0.0], 4, 4, r, Vector3::zeros()).is_err());
        assert!(Camera::new([1.0, 1.0], [0.0, 0.0], 0, 4, Matrix3::identity(), Vector3::zeros()).is_err());
        let cam = Camera::new([1.0, 1.0], [0.0, 0.0], 4, 4, Matrix3::identity(), Vector3::zeros()).unwrap();
        assert!(cam.with_near_clip(0.0).is_err());
    }

    #[test]
    fn scaling_keeps_pose_and_rescales_intrinsics() {
        let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 100.0, 128, 96).unwrap();
        let half = cam.scaled(0.5);
        assert_eq!((half.width, half.height), (64, 48));
        assert_eq!(half.focal, [50.0, 50.0]);
        assert_eq!(half.principal, [32.0, 24.0]);
        assert_eq!(half.rotation, cam.rotation);
    }
}
