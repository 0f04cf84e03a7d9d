//! Nodal force terms of the bar-and-hinge model.
//!
//! The `accumulate_*` kernels add into caller-owned buffers and are what the
//! integrator uses; the allocating wrappers exist for inspection and tests.

use crate::error::{Error, Result};
use crate::pattern::{angle_offset, hinge_frame_from_points, OrigamiMesh, Vec3};

/// Adds truss stretching forces into `out` and the current axial stiffness
/// `EA / l` of every truss into `stiffness_sum` at both endpoints.
pub(crate) fn accumulate_stretch(
    mesh: &OrigamiMesh,
    x: &[Vec3],
    out: &mut [Vec3],
    stiffness_sum: Option<&mut [f64]>,
) -> Result<()> {
    let mut ks = stiffness_sum;
    for (k, t) in mesh.trusses.iter().enumerate() {
        let d = x[t.i] - x[t.j];
        let l = d.norm();
        if !(l > 0.0) {
            return Err(Error::ZeroLengthTruss { truss: k });
        }
        let stiffness = t.ea / l;
        let f = d * (-stiffness * (l - t.rest_length) / l);
        out[t.i] += f;
        out[t.j] -= f;
        if let Some(ks) = ks.as_deref_mut() {
            ks[t.i] += stiffness;
            ks[t.j] += stiffness;
        }
    }
    Ok(())
}

/// Adds hinge bending forces. `slots[h]` routes hinge `h` to an actuator:
/// actuated hinges use `k_actuated` and the commanded equilibrium angle
/// instead of their passive stiffness and rest angle. `include` selects
/// which of the two populations to assemble.
pub(crate) fn accumulate_hinges(
    mesh: &OrigamiMesh,
    x: &[Vec3],
    slots: &[Option<usize>],
    targets: &[f64],
    include: HingeSet,
    out: &mut [Vec3],
) -> Result<()> {
    let k_act = mesh.material.k_actuated;
    for (k, h) in mesh.hinges.iter().enumerate() {
        let (per_length, reference) = match slots.get(k).copied().flatten() {
            Some(s) => {
                if include == HingeSet::Passive {
                    continue;
                }
                (k_act, targets[s])
            }
            None => {
                if include == HingeSet::Actuated {
                    continue;
                }
                (h.stiffness, h.rest_angle)
            }
        };
        let frame = hinge_frame_from_points(&x[h.p], &x[h.q], &x[h.r], &x[h.v])
            .ok_or(Error::DegenerateHinge { hinge: k })?;
        let moment = -per_length * frame.axis_length * angle_offset(frame.angle, reference);
        if moment == 0.0 {
            continue;
        }
        out[h.p] += frame.grad[0] * moment;
        out[h.q] += frame.grad[1] * moment;
        out[h.r] += frame.grad[2] * moment;
        out[h.v] += frame.grad[3] * moment;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum HingeSet {
    Passive,
    Actuated,
    All,
}

/// Truss-neighbour lists in compressed form.
#[derive(Clone, Debug)]
pub(crate) struct Adjacency {
    offsets: Vec<usize>,
    neighbours: Vec<usize>,
}

impl Adjacency {
    pub fn new(mesh: &OrigamiMesh) -> Self {
        let n = mesh.node_count();
        let mut lists = vec![Vec::new(); n];
        for t in &mesh.trusses {
            lists[t.i].push(t.j);
            lists[t.j].push(t.i);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbours = Vec::new();
        offsets.push(0);
        for l in lists {
            neighbours.extend(l);
            offsets.push(neighbours.len());
        }
        Self { offsets, neighbours }
    }

    pub fn of(&self, node: usize) -> &[usize] {
        &self.neighbours[self.offsets[node]..self.offsets[node + 1]]
    }
}

/// Adds relative-velocity damping. `stiffness_sum[p]` is the summed current
/// axial stiffness of the trusses incident to `p`.
pub(crate) fn accumulate_damping(
    mesh: &OrigamiMesh,
    adjacency: &Adjacency,
    zeta: f64,
    v: &[Vec3],
    stiffness_sum: &[f64],
    out: &mut [Vec3],
) {
    if zeta == 0.0 {
        return;
    }
    for p in 0..v.len() {
        let nbrs = adjacency.of(p);
        if nbrs.is_empty() {
            continue;
        }
        let count = nbrs.len() as f64;
        let mut avg = Vec3::zeros();
        for &q in nbrs {
            avg += v[q];
        }
        avg /= count;
        let k_s = stiffness_sum[p] / count;
        let c = 2.0 * zeta * (k_s * mesh.masses[p]).sqrt();
        out[p] -= (v[p] - avg) * c;
    }
}

/// Truss stretching forces at `positions`.
pub fn stretch_forces(mesh: &OrigamiMesh, positions: &[Vec3]) -> Result<Vec<Vec3>> {
    let mut out = vec![Vec3::zeros(); mesh.node_count()];
    accumulate_stretch(mesh, positions, &mut out, None)?;
    Ok(out)
}

/// Passive crease and facet bending forces; hinges listed in `actuated` are
/// left to [`actuation_forces`].
pub fn bend_forces(mesh: &OrigamiMesh, positions: &[Vec3], actuated: &[usize]) -> Result<Vec<Vec3>> {
    let slots = slot_table(mesh, actuated)?;
    let mut out = vec![Vec3::zeros(); mesh.node_count()];
    accumulate_hinges(mesh, positions, &slots, &[], HingeSet::Passive, &mut out)?;
    Ok(out)
}

/// Damping forces `-c_d (v_p - v_avg)` with `c_d = 2ζ sqrt(K_s m_p)`.
pub fn damping_forces(
    mesh: &OrigamiMesh,
    positions: &[Vec3],
    velocities: &[Vec3],
    zeta: f64,
) -> Result<Vec<Vec3>> {
    let n = mesh.node_count();
    let mut ks = vec![0.0; n];
    let mut scratch = vec![Vec3::zeros(); n];
    accumulate_stretch(mesh, positions, &mut scratch, Some(&mut ks))?;
    let mut out = vec![Vec3::zeros(); n];
    accumulate_damping(mesh, &Adjacency::new(mesh), zeta, velocities, &ks, &mut out);
    Ok(out)
}

/// Forces of actuated hinges driven toward the commanded equilibrium angles.
pub fn actuation_forces(
    mesh: &OrigamiMesh,
    positions: &[Vec3],
    actuated: &[usize],
    command: &super::ActuationCommand,
) -> Result<Vec<Vec3>> {
    let slots = slot_table(mesh, actuated)?;
    let targets = command.resolve(actuated)?;
    let mut out = vec![Vec3::zeros(); mesh.node_count()];
    accumulate_hinges(mesh, positions, &slots, &targets, HingeSet::Actuated, &mut out)?;
    Ok(out)
}

pub(crate) fn slot_table(mesh: &OrigamiMesh, actuated: &[usize]) -> Result<Vec<Option<usize>>> {
    let mut slots = vec![None; mesh.hinges.len()];
    for (s, &h) in actuated.iter().enumerate() {
        if h >= slots.len() {
            return Err(Error::InvalidCommand(format!("hinge {h} does not exist")));
        }
        if slots[h].is_some() {
            return Err(Error::InvalidCommand(format!("hinge {h} actuated twice")));
        }
        slots[h] = Some(s);
    }
    Ok(slots)
}
