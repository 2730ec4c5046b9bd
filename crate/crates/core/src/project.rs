//! EWA projection of 3D Gaussians to screen-space splats, and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::gaussian::{build_covariance, rotation_matrix, rotation_matrix_backward, Gaussian};

/// Low-pass dilation added to every screen-space covariance, in px².
pub const COVARIANCE_DILATION: f64 = 0.3;
/// Splat support radius in units of the largest screen-space standard deviation.
pub const RADIUS_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Dilated 2D covariance `(A, B, C)`.
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub source_index: usize,
    pub screen_radius: f64,
}

impl Splat2D {
    /// Mahalanobis distance² of the pixel-space point `(px, py)`.
    #[inline]
    pub fn mahalanobis_sq(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }
}

/// Perspective Jacobian of `(u, v)` with respect to the camera-space point.
fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let depth = -t.z;
    let [fx, fy] = cam.focal;
    Matrix2x3::new(
        fx / depth,
        0.0,
        fx * t.x / (depth * depth),
        0.0,
        -fy / depth,
        -fy * t.y / (depth * depth),
    )
}

fn project_point(cam: &Camera, t: &Vector3<f64>) -> [f64; 2] {
    let depth = -t.z;
    [cam.principal[0] + cam.focal[0] * t.x / depth, cam.principal[1] - cam.focal[1] * t.y / depth]
}

fn largest_eigenvalue(cov: [f64; 3]) -> f64 {
    let mid = 0.5 * (cov[0] + cov[2]);
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    mid + (mid * mid - det).max(0.0).sqrt()
}

/// Projects one Gaussian. Returns `None` when it lies in front of the near plane
/// or its support square misses the image entirely.
pub fn project(gaussian: &Gaussian, index: usize, cam: &Camera) -> Option<Splat2D> {
    let t = cam.world_to_camera(&Vector3::from(gaussian.position));
    let depth = -t.z;
    if !(depth > cam.near_clip) {
        return None;
    }
    let mean2d = project_point(cam, &t);
    let j = projection_jacobian(cam, &t);
    let tm = j * cam.rotation;
    let cov = tm * gaussian.covariance() * tm.transpose();
    let cov2d = [cov[(0, 0)] + COVARIANCE_DILATION, cov[(0, 1)], cov[(1, 1)] + COVARIANCE_DILATION];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let screen_radius = RADIUS_SIGMAS * largest_eigenvalue(cov2d).sqrt();
    if mean2d[0] + screen_radius < 0.0
        || mean2d[0] - screen_radius > cam.width as f64
        || mean2d[1] + screen_radius < 0.0
        || mean2d[1] - screen_radius > cam.height as f64
    {
        return None;
    }
    Some(Splat2D { mean2d, conic, cov2d, depth, source_index: index, screen_radius })
}

/// Gradients of one Gaussian's geometric attributes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeometryGrad {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
}

/// Adjoint of [`project`]: maps gradients on `mean2d` and on the symmetric conic
/// entries `(a, b, c)` (with `b` counted once, as stored) to the 3D parameters.
pub fn project_backward(gaussian: &Gaussian, splat: &Splat2D, cam: &Camera, d_mean2d: [f64; 2], d_conic: [f64; 3]) -> GeometryGrad {
    let p = Vector3::from(gaussian.position);
    let t = cam.world_to_camera(&p);
    let depth = -t.z;
    let [fx, fy] = cam.focal;
    let j = projection_jacobian(cam, &t);
    let w = cam.rotation;
    let tm = j * w;

    // conic = cov2d⁻¹; b appears twice in the symmetric matrix
    let q = Matrix2::new(splat.conic[0], splat.conic[1], splat.conic[1], splat.conic[2]);
    let gq = Matrix2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    let g_cov2d = -(q * gq * q);

    let scale = gaussian.scale();
    let rot = rotation_matrix(gaussian.rotation);
    let m = rot * Matrix3::from_diagonal(&Vector3::from(scale));
    let sigma = m * m.transpose();

    // cov2d = T Σ Tᵀ
    let g_sigma: Matrix3<f64> = tm.transpose() * g_cov2d * tm;
    let g_t: Matrix2x3<f64> = 2.0 * g_cov2d * tm * sigma;
    let g_j: Matrix2x3<f64> = g_t * w.transpose();

    // Σ = M Mᵀ with M = R S
    let g_m = 2.0 * g_sigma * m;
    let rt_gm = rot.transpose() * g_m;
    let log_scale = std::array::from_fn(|i| rt_gm[(i, i)] * scale[i]);
    let g_rot = g_m * Matrix3::from_diagonal(&Vector3::from(scale));
    let rotation = rotation_matrix_backward(gaussian.rotation, &g_rot);

    // camera-space point: through the mean projection (whose Jacobian is J) and through J itself
    let dm = Vector2::from(d_mean2d);
    let mut g_cam = j.transpose() * dm;
    let d2 = depth * depth;
    let d3 = d2 * depth;
    g_cam.x += g_j[(0, 2)] * fx / d2;
    g_cam.y += g_j[(1, 2)] * (-fy / d2);
    g_cam.z += g_j[(0, 0)] * (fx / d2)
        + g_j[(0, 2)] * (2.0 * fx * t.x / d3)
        + g_j[(1, 1)] * (-fy / d2)
        + g_j[(1, 2)] * (-2.0 * fy * t.y / d3);
    let g_pos = w.transpose() * g_cam;

    GeometryGrad { position: g_pos.into(), log_scale, rotation }
}

/// Screen-space covariance before dilation, exposed for tests and diagnostics.
pub fn screen_covariance(gaussian: &Gaussian, cam: &Camera) -> Matrix2<f64> {
    let t = cam.world_to_camera(&Vector3::from(gaussian.position));
    let tm = projection_jacobian(cam, &t) * cam.rotation;
    tm * build_covariance(gaussian.scale(), gaussian.rotation) * tm.transpose()
}
