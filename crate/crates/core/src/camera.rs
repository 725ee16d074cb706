//! Pinhole projection with radial-tangential lens distortion.
//!
//! ```text
//! x = X/Z, y = Y/Z                                  normalized (z = 1 plane)
//! r² = x² + y²
//! radial = 1 + k1 r² + k2 r⁴ + k3 r⁶
//! xd = radial x + 2 p1 x y + p2 (r² + 2x²)
//! yd = radial y + p1 (r² + 2y²) + 2 p2 x y
//! u  = fx (xd + skew yd) + cx
//! v  = fy yd + cy
//! ```

use crate::trace::CameraIntrinsics;

/// Maximum fixed-point iterations when inverting the distortion.
pub const UNDISTORT_MAX_ITER: usize = 50;
/// Convergence threshold on the fixed-point step.
pub const UNDISTORT_STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),
    #[error("undistortion did not converge for pixel ({u}, {v})")]
    UndistortionFailed { u: f64, v: f64 },
}

/// Apply lens distortion to a normalized point.
pub fn distort(k: &CameraIntrinsics, x: f64, y: f64) -> (f64, f64) {
    let r2 = x * x + y * y;
    let radial = 1.0 + r2 * (k.k1 + r2 * (k.k2 + r2 * k.k3));
    let dx = 2.0 * k.p1 * x * y + k.p2 * (r2 + 2.0 * x * x);
    let dy = k.p1 * (r2 + 2.0 * y * y) + 2.0 * k.p2 * x * y;
    (radial * x + dx, radial * y + dy)
}

/// Distorted normalized coordinates to pixels.
pub fn to_pixel(k: &CameraIntrinsics, xd: f64, yd: f64) -> (f64, f64) {
    (k.fx * (xd + k.skew * yd) + k.cx, k.fy * yd + k.cy)
}

/// Pixels to distorted normalized coordinates.
pub fn from_pixel(k: &CameraIntrinsics, u: f64, v: f64) -> (f64, f64) {
    let yd = (v - k.cy) / k.fy;
    let xd = (u - k.cx) / k.fx - k.skew * yd;
    (xd, yd)
}

/// Project a camera-frame point to pixels.
pub fn project(k: &CameraIntrinsics, p: [f64; 3]) -> Result<(f64, f64), CameraError> {
    let [x, y, z] = p;
    if !(z > 0.0) {
        return Err(CameraError::BehindCamera(z));
    }
    let (xd, yd) = distort(k, x / z, y / z);
    Ok(to_pixel(k, xd, yd))
}

/// Invert the pixel mapping and the lens distortion, returning coordinates on
/// the z = 1 plane.
///
/// The distortion is inverted by damped fixed-point iteration on
/// `x = (xd - tangential(x)) / radial(x)`; the damping factor halves whenever
/// a step grows, which keeps the iteration bounded near the edge of the
/// invertible region.
pub fn undistort(k: &CameraIntrinsics, u: f64, v: f64) -> Result<(f64, f64), CameraError> {
    let (xd, yd) = from_pixel(k, u, v);
    if !k.has_distortion() {
        return Ok((xd, yd));
    }
    let mut x = xd;
    let mut y = yd;
    let mut damping = 1.0;
    let mut last_step = f64::INFINITY;
    for _ in 0..UNDISTORT_MAX_ITER {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k.k1 + r2 * (k.k2 + r2 * k.k3));
        if !(radial > 0.0) {
            break;
        }
        let dx = 2.0 * k.p1 * x * y + k.p2 * (r2 + 2.0 * x * x);
        let dy = k.p1 * (r2 + 2.0 * y * y) + 2.0 * k.p2 * x * y;
        let nx = (xd - dx) / radial;
        let ny = (yd - dy) / radial;
        let step = (nx - x).hypot(ny - y);
        if step > last_step {
            damping *= 0.5;
        }
        x += damping * (nx - x);
        y += damping * (ny - y);
        if !x.is_finite() || !y.is_finite() {
            break;
        }
        if step < UNDISTORT_STEP_TOL {
            return Ok((x, y));
        }
        last_step = step;
    }
    // The step criterion can stall a hair above tolerance from rounding alone;
    // accept the point if it reprojects onto the observation.
    if x.is_finite() && y.is_finite() {
        let (rx, ry) = distort(k, x, y);
        if (rx - xd).hypot(ry - yd) < 1e-11 {
            return Ok((x, y));
        }
    }
    Err(CameraError::UndistortionFailed { u, v })
}
