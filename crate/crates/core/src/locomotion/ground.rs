//! Penalty contact with a horizontal ground plane.

use serde::{Deserialize, Serialize};

use crate::pattern::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundContact {
    /// Plane height (m).
    pub height: f64,
    /// Penalty stiffness (N/m).
    pub stiffness: f64,
    /// Vertical damping of penetrating nodes (N·s/m).
    pub damping: f64,
}

impl Default for GroundContact {
    fn default() -> Self {
        Self { height: 0.0, stiffness: 1e4, damping: 5.0 }
    }
}

impl GroundContact {
    /// Upward force on a node at height `z` moving vertically at `vz`; zero
    /// above the plane and never pulling down.
    pub fn normal_force(&self, z: f64, vz: f64) -> f64 {
        let depth = self.height - z;
        if depth <= 0.0 {
            return 0.0;
        }
        (self.stiffness * depth - self.damping * vz).max(0.0)
    }

    pub(crate) fn accumulate(&self, x: &[Vec3], v: &[Vec3], out: &mut [Vec3]) {
        for ((p, vel), f) in x.iter().zip(v).zip(out.iter_mut()) {
            f.z += self.normal_force(p.z, vel.z);
        }
    }

    /// Per-node contact forces.
    pub fn forces(&self, x: &[Vec3], v: &[Vec3]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); x.len()];
        self.accumulate(x, v, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_examples() {
        let g = GroundContact::default();
        assert_eq!(g.normal_force(1e-6, 0.0), 0.0);
        assert_eq!(g.normal_force(0.0, -1.0), 0.0);
        assert!((g.normal_force(-1e-3, 0.0) - 10.0).abs() < 1e-12);
        assert_eq!(g.normal_force(-1e-3, 10.0), 0.0);
    }
}
