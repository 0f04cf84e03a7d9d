//! Dihedral (folding) angle of a hinge and its gradient with respect to the
//! four hinge nodes.
//!
//! A hinge rotates about the axis `p`–`q` and is flanked by the wing
//! triangles `pqr` and `pqv`. With `m = r_rq × r_pq` and `n = r_pq × r_pv`
//! the folding angle is the angle between `m` and `n`, signed by
//! `m · r_pv`, reported in `[0, 2π)`. Valley folds land in `(0, π]`,
//! mountain folds in `(π, 2π)`.

use nalgebra::Vector3;
use std::f64::consts::PI;

use super::Hinge;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Squared normal length below which a wing triangle counts as degenerate.
const DEGENERATE_EPS: f64 = 1e-30;

/// Intermediate quantities shared by the angle and gradient evaluation.
#[derive(Clone, Copy, Debug)]
pub struct HingeFrame {
    pub angle: f64,
    /// Gradients for nodes p, q, r, v (in that order).
    pub grad: [Vec3; 4],
    /// Current length of the hinge axis.
    pub axis_length: f64,
}

fn signed_angle(m: &Vec3, n: &Vec3, r_pv: &Vec3) -> f64 {
    // atan2 keeps full precision near the flat state where arccos does not.
    let alpha = m.cross(n).norm().atan2(m.dot(n));
    let dot = m.dot(r_pv);
    let eta = if dot < 0.0 { -1.0 } else { 1.0 };
    (eta * alpha).rem_euclid(2.0 * PI)
}

/// Folding angle for raw node positions.
pub fn dihedral_from_points(p: &Vec3, q: &Vec3, r: &Vec3, v: &Vec3) -> Result<f64> {
    let r_pq = p - q;
    let r_rq = r - q;
    let r_pv = p - v;
    let m = r_rq.cross(&r_pq);
    let n = r_pq.cross(&r_pv);
    if m.norm_squared() < DEGENERATE_EPS || n.norm_squared() < DEGENERATE_EPS {
        return Err(Error::DegenerateHinge { hinge: usize::MAX });
    }
    Ok(signed_angle(&m, &n, &r_pv))
}

/// Folding angle and its analytic gradient for raw node positions.
pub fn hinge_frame_from_points(p: &Vec3, q: &Vec3, r: &Vec3, v: &Vec3) -> Option<HingeFrame> {
    let r_pq = p - q;
    let r_rq = r - q;
    let r_pv = p - v;
    let m = r_rq.cross(&r_pq);
    let n = r_pq.cross(&r_pv);
    let m2 = m.norm_squared();
    let n2 = n.norm_squared();
    if m2 < DEGENERATE_EPS || n2 < DEGENERATE_EPS {
        return None;
    }
    let angle = signed_angle(&m, &n, &r_pv);

    let l2 = r_pq.norm_squared();
    let l = l2.sqrt();
    let d_r = m * (l / m2);
    let d_v = n * (-l / n2);
    let c_v = r_pv.dot(&r_pq) / l2;
    let c_r = r_rq.dot(&r_pq) / l2;
    let d_p = d_v * (c_v - 1.0) - d_r * c_r;
    let d_q = d_r * (c_r - 1.0) - d_v * c_v;
    Some(HingeFrame {
        angle,
        grad: [d_p, d_q, d_r, d_v],
        axis_length: l,
    })
}

/// Folding angle of `hinge` (whose index is `id`) at `positions`.
pub fn dihedral_angle(positions: &[Vec3], hinge: &Hinge, id: usize) -> Result<f64> {
    let [p, q, r, v] = hinge.nodes();
    dihedral_from_points(&positions[p], &positions[q], &positions[r], &positions[v])
        .map_err(|_| Error::DegenerateHinge { hinge: id })
}

/// Gradient `∂φ/∂x` for the nodes p, q, r, v of `hinge`.
pub fn dihedral_gradient(positions: &[Vec3], hinge: &Hinge, id: usize) -> Result<[Vec3; 4]> {
    hinge_frame(positions, hinge, id).map(|f| f.grad)
}

pub fn hinge_frame(positions: &[Vec3], hinge: &Hinge, id: usize) -> Result<HingeFrame> {
    let [p, q, r, v] = hinge.nodes();
    hinge_frame_from_points(&positions[p], &positions[q], &positions[r], &positions[v])
        .ok_or(Error::DegenerateHinge { hinge: id })
}

/// Signed deviation `φ − reference` taken on the circle, in `(−π, π]`.
/// A hinge pushed slightly through the fully folded state (φ wrapping from
/// 0 to 2π) is pulled back instead of driven the long way round.
pub fn angle_offset(phi: f64, reference: f64) -> f64 {
    let d = (phi - reference).rem_euclid(2.0 * PI);
    if d > PI { d - 2.0 * PI } else { d }
}
