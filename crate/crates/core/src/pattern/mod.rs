//! Folded Miura-ori sheets discretized as bar-and-hinge meshes.
//!
//! Nodes sit on a grid `(i, j)` with `i` stepping along crease length `a`
//! (the y direction) and `j` along crease length `b` (the x direction).
//! Every quadrilateral facet is split by its shorter diagonal; interior
//! pattern edges become crease hinges, diagonals become facet hinges.

mod dihedral;
mod imperfection;
mod io;

pub use dihedral::{
    angle_offset, dihedral_angle, dihedral_from_points, dihedral_gradient, hinge_frame, hinge_frame_from_points,
    HingeFrame, Vec3,
};
pub use imperfection::{imperfection_kernel, perturb_vertices, ImperfectionSpec};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Geometric parameters of a Miura-ori sheet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiuraDesign {
    /// Crease length along the zig-zag profile (m).
    pub a: f64,
    /// Crease length along the plan-view zig-zag (m).
    pub b: f64,
    /// Sector angle (rad).
    pub gamma: f64,
    /// Dihedral between each facet and the x-y plane (rad).
    pub theta: f64,
    /// Node count along the `a` direction.
    pub n_rows: usize,
    /// Node count along the `b` direction.
    pub n_cols: usize,
}

impl Default for MiuraDesign {
    fn default() -> Self {
        Self {
            a: 0.016,
            b: 0.010,
            gamma: 48f64.to_radians(),
            theta: 60f64.to_radians(),
            n_rows: 9,
            n_cols: 9,
        }
    }
}

impl MiuraDesign {
    pub fn with_size(mut self, n_rows: usize, n_cols: usize) -> Self {
        self.n_rows = n_rows;
        self.n_cols = n_cols;
        self
    }

    /// Checks the design invariants, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidDesign(format!("{field}: {why}")));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad("a", "must be positive");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad("b", "must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < FRAC_PI_2) {
            return bad("gamma", "must lie in (0, pi/2)");
        }
        if !(self.theta > 0.0 && self.theta < FRAC_PI_2) {
            return bad("theta", "must lie in (0, pi/2)");
        }
        if self.n_rows < 2 {
            return bad("n_rows", "must be at least 2");
        }
        if self.n_cols < 2 {
            return bad("n_cols", "must be at least 2");
        }
        Ok(())
    }

    /// Expected number of crease hinges (interior pattern edges).
    pub fn crease_count(&self) -> usize {
        let (r, c) = (self.n_rows, self.n_cols);
        (r - 2) * (c - 1) + (r - 1) * (c - 2)
    }

    /// Folded unit-step vectors: the `a` step (sign by row parity of the
    /// start node) and the `b` step (sign by column parity).
    fn steps(&self, theta: f64) -> (f64, f64, f64, f64) {
        let (st, ct) = theta.sin_cos();
        let (sg, tg) = (self.gamma.sin(), self.gamma.tan());
        let height = self.a * st * sg;
        let length = self.a * (1.0 - st * st * sg * sg).sqrt();
        let denom = (1.0 + ct * ct * tg * tg).sqrt();
        let width = self.b * ct * tg / denom;
        let offset = self.b / denom;
        (length, height, width, offset)
    }

    fn node_position(&self, theta: f64, i: usize, j: usize) -> Vec3 {
        let (l, h, s, v) = self.steps(theta);
        Vec3::new(
            j as f64 * s,
            i as f64 * l + if j % 2 == 1 { v } else { 0.0 },
            if i % 2 == 1 { h } else { 0.0 },
        )
    }
}

/// Material constants. Hinge stiffnesses are per unit hinge length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Material {
    /// Initial axial stiffness of every truss, `EA / l0` (N/m).
    pub k_s: f64,
    /// Passive crease stiffness (N/(m·rad)).
    pub k_crease: f64,
    /// Stiffness of actuated creases (N/(m·rad)).
    pub k_actuated: f64,
    /// Facet bending stiffness (N/(m·rad)).
    pub k_facet: f64,
    /// Mass lumped at every node (kg).
    pub nodal_mass: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            k_s: 100.0,
            k_crease: 0.2525,
            k_actuated: 1.0,
            k_facet: 10.0,
            nodal_mass: 0.007,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("k_s", self.k_s),
            ("k_crease", self.k_crease),
            ("k_actuated", self.k_actuated),
            ("k_facet", self.k_facet),
            ("nodal_mass", self.nodal_mass),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidDesign(format!("{name}: must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeKind {
    Crease,
    Facet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldSign {
    Mountain,
    Valley,
}

impl FoldSign {
    pub fn of_angle(phi: f64) -> Self {
        if phi > PI + 1e-12 {
            FoldSign::Mountain
        } else {
            FoldSign::Valley
        }
    }

    /// Direction in which the folding angle moves when the crease closes.
    pub fn closing_direction(self) -> f64 {
        match self {
            FoldSign::Valley => -1.0,
            FoldSign::Mountain => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truss {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    /// Axial rigidity EA (N).
    pub ea: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hinge {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub v: usize,
    pub kind: HingeKind,
    /// Torsional stiffness per unit axis length (N/rad).
    pub stiffness: f64,
    pub rest_angle: f64,
    pub fold: FoldSign,
}

impl Hinge {
    pub fn nodes(&self) -> [usize; 4] {
        [self.p, self.q, self.r, self.v]
    }
}

/// Nodes, trusses and hinges of a bar-and-hinge sheet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrigamiMesh {
    pub positions: Vec<Vec3>,
    pub masses: Vec<f64>,
    pub trusses: Vec<Truss>,
    /// Crease hinges first, then facet hinges.
    pub hinges: Vec<Hinge>,
    pub material: Material,
}

impl OrigamiMesh {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    /// Ids of crease hinges, in mesh order.
    pub fn crease_ids(&self) -> Vec<usize> {
        self.hinges
            .iter()
            .enumerate()
            .filter(|(_, h)| h.kind == HingeKind::Crease)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Recomputes truss rest lengths (keeping `EA / l0`) and hinge rest
    /// angles from the current node positions.
    pub fn reset_rest_state(&mut self) -> Result<()> {
        for (k, t) in self.trusses.iter_mut().enumerate() {
            let l = (self.positions[t.i] - self.positions[t.j]).norm();
            if l <= 0.0 || !l.is_finite() {
                return Err(Error::ZeroLengthTruss { truss: k });
            }
            let k_axial = t.ea / t.rest_length;
            t.rest_length = l;
            t.ea = k_axial * l;
        }
        for k in 0..self.hinges.len() {
            let phi = dihedral_angle(&self.positions, &self.hinges[k], k)?;
            let h = &mut self.hinges[k];
            h.rest_angle = phi;
            if h.kind == HingeKind::Crease {
                h.fold = FoldSign::of_angle(phi);
            }
        }
        Ok(())
    }

    /// Current folding angles of all hinges.
    pub fn angles(&self, positions: &[Vec3]) -> Result<Vec<f64>> {
        self.hinges
            .iter()
            .enumerate()
            .map(|(k, h)| dihedral_angle(positions, h, k))
            .collect()
    }

    /// Checks the structural invariants of the mesh.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        let bad = |msg: String| Err(Error::InvalidMesh(msg));
        if n == 0 {
            return bad("mesh has no nodes".into());
        }
        if self.masses.len() != n {
            return bad(format!("{} masses for {n} nodes", self.masses.len()));
        }
        if let Some(k) = self.positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return bad(format!("node {k} has a non-finite coordinate"));
        }
        if let Some(k) = self.masses.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return bad(format!("node {k} has non-positive mass"));
        }
        let mut edges = std::collections::HashSet::new();
        for (k, t) in self.trusses.iter().enumerate() {
            if t.i >= n || t.j >= n || t.i == t.j {
                return bad(format!("truss {k} has invalid endpoints ({}, {})", t.i, t.j));
            }
            if !(t.rest_length > 0.0 && t.rest_length.is_finite() && t.ea > 0.0 && t.ea.is_finite()) {
                return bad(format!("truss {k} needs positive rest length and EA"));
            }
            let l = (self.positions[t.i] - self.positions[t.j]).norm();
            if (l - t.rest_length).abs() > 1e-9 * t.rest_length.max(1.0) {
                return bad(format!("truss {k} rest length differs from node distance"));
            }
            edges.insert(edge_key(t.i, t.j));
        }
        for (k, h) in self.hinges.iter().enumerate() {
            let nodes = h.nodes();
            if nodes.iter().any(|&x| x >= n) {
                return bad(format!("hinge {k} references a missing node"));
            }
            let [p, q, r, v] = nodes;
            for (a, b) in [(p, q), (p, r), (q, r), (p, v), (q, v)] {
                if !edges.contains(&edge_key(a, b)) {
                    return bad(format!("hinge {k} needs truss ({a}, {b})"));
                }
            }
            if !(h.stiffness >= 0.0 && h.stiffness.is_finite()) {
                return bad(format!("hinge {k} has invalid stiffness"));
            }
            if !(0.0..=2.0 * PI).contains(&h.rest_angle) {
                return bad(format!("hinge {k} rest angle outside [0, 2pi]"));
            }
            dihedral_angle(&self.positions, h, k)?;
        }
        self.material.validate().map_err(|e| Error::InvalidMesh(e.to_string()))
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn cross2(o: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Builds the folded Miura-ori mesh for `design`.
pub fn build_miura(design: &MiuraDesign, material: &Material) -> Result<OrigamiMesh> {
    design.validate()?;
    material.validate()?;
    let (rows, cols) = (design.n_rows, design.n_cols);
    let id = |i: usize, j: usize| i * cols + j;

    let mut positions = Vec::with_capacity(rows * cols);
    let mut layout = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            positions.push(design.node_position(design.theta, i, j));
            layout.push(design.node_position(0.0, i, j));
        }
    }

    // Pattern edges: `a` edges then `b` edges.
    let mut pattern_edges = Vec::new();
    for i in 0..rows - 1 {
        for j in 0..cols {
            pattern_edges.push((id(i, j), id(i + 1, j)));
        }
    }
    for i in 0..rows {
        for j in 0..cols - 1 {
            pattern_edges.push((id(i, j), id(i, j + 1)));
        }
    }

    // Triangulate facets along the shorter diagonal.
    let mut diagonals = Vec::new();
    let mut wings: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            let (c00, c10, c01, c11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            let d_anti = (positions[c10] - positions[c01]).norm();
            let d_main = (positions[c00] - positions[c11]).norm();
            let tris = if d_anti <= d_main {
                diagonals.push((c10, c01));
                [[c00, c10, c01], [c11, c01, c10]]
            } else {
                diagonals.push((c00, c11));
                [[c00, c10, c11], [c00, c11, c01]]
            };
            for t in tris {
                for (a, b, c) in [(t[0], t[1], t[2]), (t[1], t[2], t[0]), (t[2], t[0], t[1])] {
                    wings.entry(edge_key(a, b)).or_default().push(c);
                }
            }
        }
    }

    let trusses = pattern_edges
        .iter()
        .chain(diagonals.iter())
        .map(|&(i, j)| {
            let l = (positions[i] - positions[j]).norm();
            Truss {
                i,
                j,
                rest_length: l,
                ea: material.k_s * l,
            }
        })
        .collect();

    let mut hinges = Vec::new();
    let mut add_hinge = |(a, b): (usize, usize), kind: HingeKind, stiffness: f64| -> Result<()> {
        let Some(w) = wings.get(&edge_key(a, b)) else {
            return Ok(());
        };
        if w.len() != 2 {
            return Ok(());
        }
        // r is the wing on the left of p->q in the flat crease pattern.
        let (r, v) = if cross2(&layout[a], &layout[b], &layout[w[0]]) > 0.0 {
            (w[0], w[1])
        } else {
            (w[1], w[0])
        };
        let mut h = Hinge {
            p: a,
            q: b,
            r,
            v,
            kind,
            stiffness,
            rest_angle: 0.0,
            fold: FoldSign::Valley,
        };
        let phi = dihedral_angle(&positions, &h, hinges.len())?;
        h.rest_angle = phi;
        h.fold = FoldSign::of_angle(phi);
        hinges.push(h);
        Ok(())
    };
    for &e in &pattern_edges {
        add_hinge(e, HingeKind::Crease, material.k_crease)?;
    }
    for &e in &diagonals {
        add_hinge(e, HingeKind::Facet, material.k_facet)?;
    }
    for h in hinges.iter_mut().filter(|h| h.kind == HingeKind::Facet) {
        h.fold = FoldSign::Valley;
    }

    Ok(OrigamiMesh {
        masses: vec![material.nodal_mass; positions.len()],
        positions,
        trusses,
        hinges,
        material: *material,
    })
}
