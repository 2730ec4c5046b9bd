//! Scene data model: 3D Gaussian primitives and the containing scene.
//!
//! Constrained attributes are stored in an unconstrained parameterization so
//! the optimizer can work on raw values:
//!
//! | attribute | stored as            | activated as          |
//! |-----------|----------------------|-----------------------|
//! | scale     | log-scale            | `exp(log_scale)`      |
//! | opacity   | logit                | `sigmoid(logit)`      |
//! | rotation  | unnormalized quat    | `q / |q|`             |
//! | color     | raw RGB              | `clamp(c, 0, 1)`      |

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// One Gaussian primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    /// Quaternion as `(w, x, y, z)`; normalized before every use.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub semantic: Vec<f64>,
}

impl Gaussian {
    pub fn new(position: [f64; 3], scale: [f64; 3], opacity: f64, color: [f64; 3], semantic_dim: usize) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
            semantic: vec![0.0; semantic_dim],
        }
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn clamped_color(&self) -> [f64; 3] {
        self.color.map(|c| c.clamp(0.0, 1.0))
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        build_covariance(self.scale(), self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(&self.color)
            .chain(&self.semantic)
            .chain(std::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite())
    }
}

/// A set of Gaussians sharing one semantic dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub background: [f64; 3],
    pub semantic_dim: usize,
    pub class_count: usize,
}

impl Scene {
    pub fn new(semantic_dim: usize, class_count: usize) -> Result<Self> {
        if semantic_dim < 1 {
            return Err(Error::invalid("semantic_dim must be at least 1"));
        }
        if class_count < 2 {
            return Err(Error::invalid("class_count must be at least 2"));
        }
        Ok(Self { gaussians: Vec::new(), background: [0.0; 3], semantic_dim, class_count })
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn push(&mut self, gaussian: Gaussian) -> Result<()> {
        if gaussian.semantic.len() != self.semantic_dim {
            return Err(Error::shape(format!(
                "gaussian semantic dimension {} does not match scene dimension {}",
                gaussian.semantic.len(),
                self.semantic_dim
            )));
        }
        self.gaussians.push(gaussian);
        Ok(())
    }

    /// Checks the per-Gaussian invariants that the optimizer could break.
    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.semantic.len() != self.semantic_dim {
                return Err(Error::shape(format!("gaussian {i} has semantic dimension {}", g.semantic.len())));
            }
            if !g.is_finite() {
                return Err(Error::invalid(format!("gaussian {i} has non-finite parameters")));
            }
            if quat_norm(g.rotation) == 0.0 {
                return Err(Error::invalid(format!("gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub(crate) fn quat_norm(q: [f64; 4]) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Backpropagates a gradient on the rotation matrix to the raw (unnormalized) quaternion.
pub(crate) fn rotation_matrix_backward(q: [f64; 4], d_rot: &Matrix3<f64>) -> [f64; 4] {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = |r: usize, c: usize| d_rot[(r, c)];

    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));

    // through q / |q|
    let dn = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let dot: f64 = dn.iter().zip(&qn).map(|(a, b)| a * b).sum();
    std::array::from_fn(|i| (dn[i] - qn[i] * dot) / n)
}

/// Σ = R S Sᵀ Rᵀ for positive `scale` and a nonzero quaternion.
pub fn build_covariance(scale: [f64; 3], rotation: [f64; 4]) -> Matrix3<f64> {
    let m = rotation_matrix(rotation) * Matrix3::from_diagonal(&Vector3::from(scale));
    m * m.transpose()
}
