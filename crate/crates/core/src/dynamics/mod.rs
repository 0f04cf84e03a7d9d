//! Equations of motion `m_p ẍ_p = F_p` for every node, integrated with
//! fixed-step classical Runge–Kutta.

mod forces;

pub use forces::{actuation_forces, bend_forces, damping_forces, stretch_forces};
pub(crate) use forces::{accumulate_hinges, accumulate_stretch, slot_table, HingeSet};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::locomotion::GroundContact;
use crate::pattern::{angle_offset, dihedral_angle, hinge_frame_from_points, OrigamiMesh, Vec3};
use crate::reservoir::ReservoirTrace;
use forces::{accumulate_damping, Adjacency};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration step (s).
    pub dt: f64,
    pub damping_ratio: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: [f64; 3],
    pub pinned_nodes: Vec<usize>,
    /// Integration steps per recorded sample.
    pub record_stride: usize,
    /// Removes the net force of the relative-velocity damping (mass
    /// weighted) so an unconstrained body cannot propel itself through it.
    #[serde(default)]
    pub zero_net_damping: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            damping_ratio: 0.2,
            gravity: [0.0; 3],
            pinned_nodes: Vec::new(),
            record_stride: 1,
            zero_net_damping: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("sim.dt", "must be positive"));
        }
        if !(self.damping_ratio >= 0.0 && self.damping_ratio.is_finite()) {
            return Err(Error::config("sim.damping_ratio", "must be non-negative"));
        }
        if self.record_stride == 0 {
            return Err(Error::config("sim.record_stride", "must be at least 1"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::config("sim.gravity", "must be finite"));
        }
        Ok(())
    }

    /// Pins the three nodes `(0,0)`, `(0,1)`, `(1,0)` of the corner facet of
    /// a grid mesh with `n_cols` columns.
    pub fn pin_corner_facet(mut self, n_cols: usize) -> Self {
        self.pinned_nodes = vec![0, 1, n_cols];
        self
    }

    /// Sampling interval of recorded traces.
    pub fn sample_dt(&self) -> f64 {
        self.dt * self.record_stride as f64
    }

    pub fn steps_for(&self, duration: f64) -> usize {
        (duration / self.dt).round().max(0.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
}

impl SimState {
    pub fn at_rest(mesh: &OrigamiMesh) -> Self {
        Self {
            t: 0.0,
            positions: mesh.positions.clone(),
            velocities: vec![Vec3::zeros(); mesh.node_count()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn max_displacement(&self, mesh: &OrigamiMesh) -> f64 {
        self.positions
            .iter()
            .zip(&mesh.positions)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Commanded equilibrium angles for a set of actuated hinges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuationCommand {
    pub hinges: Vec<usize>,
    pub targets: Vec<f64>,
}

impl ActuationCommand {
    pub fn new(hinges: Vec<usize>, targets: Vec<f64>) -> Result<Self> {
        if hinges.len() != targets.len() {
            return Err(Error::InvalidCommand(format!(
                "{} hinges but {} targets",
                hinges.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|t| !(0.0..=2.0 * PI).contains(*t)) {
            return Err(Error::InvalidCommand(format!("target {t} outside [0, 2pi]")));
        }
        Ok(Self { hinges, targets })
    }

    /// Targets reordered to match `actuated`; every commanded hinge must be
    /// actuated and every actuated hinge commanded.
    pub fn resolve(&self, actuated: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![f64::NAN; actuated.len()];
        for (&h, &t) in self.hinges.iter().zip(&self.targets) {
            let slot = actuated
                .iter()
                .position(|&a| a == h)
                .ok_or_else(|| Error::InvalidCommand(format!("hinge {h} is not actuated")))?;
            out[slot] = t;
        }
        if out.iter().any(|t| t.is_nan()) {
            return Err(Error::InvalidCommand("command does not cover every actuated hinge".into()));
        }
        Ok(out)
    }
}

/// Supplies actuation targets at each control update.
pub trait Controller {
    /// `sensors` holds the current sensor-hinge angles; `targets` arrives
    /// holding the previous command and is overwritten in actuated order.
    fn command(&mut self, t: f64, sensors: &[f64], targets: &mut [f64]) -> Result<()>;
}

impl<F> Controller for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn command(&mut self, t: f64, sensors: &[f64], targets: &mut [f64]) -> Result<()> {
        self(t, sensors, targets)
    }
}

/// Per-step access to kinematic constraints during a run.
pub trait StepHook {
    /// Called before step `step`; may set or clear in-plane locks per node.
    fn before_step(&mut self, step: usize, state: &SimState, planar_lock: &mut [bool]) -> Result<()>;
}

/// Hook that does nothing.
pub struct NoHook;

impl StepHook for NoHook {
    fn before_step(&mut self, _: usize, _: &SimState, _: &mut [bool]) -> Result<()> {
        Ok(())
    }
}

/// Integrator for one mesh with a fixed set of actuated hinges.
#[derive(Clone, Debug)]
pub struct Simulator<'m> {
    mesh: &'m OrigamiMesh,
    config: SimConfig,
    gravity: Vec3,
    actuated: Vec<usize>,
    slots: Vec<Option<usize>>,
    targets: Vec<f64>,
    adjacency: Adjacency,
    pinned: Vec<bool>,
    planar_lock: Vec<bool>,
    ground: Option<GroundContact>,
    inv_mass: Vec<f64>,
    total_mass: f64,
    // scratch
    force: Vec<Vec3>,
    stiffness_sum: Vec<f64>,
    stage_x: Vec<Vec3>,
    stage_v: Vec<Vec3>,
    sum_x: Vec<Vec3>,
    sum_v: Vec<Vec3>,
    accel: Vec<Vec3>,
}

impl<'m> Simulator<'m> {
    pub fn new(mesh: &'m OrigamiMesh, config: &SimConfig, actuated: &[usize]) -> Result<Self> {
        config.validate()?;
        let n = mesh.node_count();
        let slots = slot_table(mesh, actuated)?;
        let mut pinned = vec![false; n];
        for &p in &config.pinned_nodes {
            if p >= n {
                return Err(Error::config("sim.pinned_nodes", format!("node {p} does not exist")));
            }
            pinned[p] = true;
        }
        let targets = actuated.iter().map(|&h| mesh.hinges[h].rest_angle).collect();
        Ok(Self {
            mesh,
            config: config.clone(),
            gravity: Vec3::from(config.gravity),
            actuated: actuated.to_vec(),
            slots,
            targets,
            adjacency: Adjacency::new(mesh),
            pinned,
            planar_lock: vec![false; n],
            ground: None,
            inv_mass: mesh.masses.iter().map(|m| 1.0 / m).collect(),
            total_mass: mesh.total_mass(),
            force: vec![Vec3::zeros(); n],
            stiffness_sum: vec![0.0; n],
            stage_x: vec![Vec3::zeros(); n],
            stage_v: vec![Vec3::zeros(); n],
            sum_x: vec![Vec3::zeros(); n],
            sum_v: vec![Vec3::zeros(); n],
            accel: vec![Vec3::zeros(); n],
        })
    }

    pub fn mesh(&self) -> &'m OrigamiMesh {
        self.mesh
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn actuated(&self) -> &[usize] {
        &self.actuated
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn targets_mut(&mut self) -> &mut [f64] {
        &mut self.targets
    }

    pub fn set_command(&mut self, command: &ActuationCommand) -> Result<()> {
        self.targets = command.resolve(&self.actuated)?;
        Ok(())
    }

    pub fn set_ground(&mut self, ground: Option<GroundContact>) {
        self.ground = ground;
    }

    /// Locks (or releases) the in-plane motion of `node`.
    pub fn set_planar_lock(&mut self, node: usize, locked: bool) {
        self.planar_lock[node] = locked;
    }

    pub fn planar_locked(&self, node: usize) -> bool {
        self.planar_lock[node]
    }

    /// Total nodal force at the given state, before constraints.
    pub fn total_forces(&mut self, x: &[Vec3], v: &[Vec3]) -> Result<Vec<Vec3>> {
        self.assemble(x, v)?;
        Ok(self.force.clone())
    }

    fn assemble(&mut self, x: &[Vec3], v: &[Vec3]) -> Result<()> {
        let mesh = self.mesh;
        self.force.iter_mut().for_each(|f| *f = Vec3::zeros());
        self.stiffness_sum.iter_mut().for_each(|k| *k = 0.0);
        accumulate_stretch(mesh, x, &mut self.force, Some(&mut self.stiffness_sum))?;
        accumulate_hinges(mesh, x, &self.slots, &self.targets, HingeSet::All, &mut self.force)?;
        let before: Vec3 = if self.config.zero_net_damping { self.force.iter().sum() } else { Vec3::zeros() };
        accumulate_damping(
            mesh,
            &self.adjacency,
            self.config.damping_ratio,
            v,
            &self.stiffness_sum,
            &mut self.force,
        );
        if self.config.zero_net_damping {
            let net = (self.force.iter().sum::<Vec3>() - before) / self.total_mass;
            for (f, m) in self.force.iter_mut().zip(&mesh.masses) {
                *f -= net * *m;
            }
        }
        if self.gravity != Vec3::zeros() {
            for (f, m) in self.force.iter_mut().zip(&mesh.masses) {
                *f += self.gravity * *m;
            }
        }
        if let Some(g) = &self.ground {
            g.accumulate(x, v, &mut self.force);
        }
        Ok(())
    }

    fn acceleration(&mut self, x: &[Vec3], v: &[Vec3]) -> Result<()> {
        self.assemble(x, v)?;
        for k in 0..self.force.len() {
            let mut a = self.force[k] * self.inv_mass[k];
            if self.pinned[k] {
                a = Vec3::zeros();
            } else if self.planar_lock[k] {
                a.x = 0.0;
                a.y = 0.0;
            }
            self.accel[k] = a;
        }
        Ok(())
    }

    fn apply_velocity_constraints(&self, state: &mut SimState) {
        for k in 0..state.velocities.len() {
            if self.pinned[k] {
                state.velocities[k] = Vec3::zeros();
            } else if self.planar_lock[k] {
                state.velocities[k].x = 0.0;
                state.velocities[k].y = 0.0;
            }
        }
    }

    /// Geometry errors raised on a non-finite stage are reported as divergence.
    fn blame(&self, err: Error, x: &[Vec3], t: f64) -> Error {
        if x.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return err;
        }
        let max_displacement = x
            .iter()
            .zip(&self.mesh.positions)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        Error::Divergence { time: t, max_displacement }
    }

    /// Advances `state` by one step holding the current command.
    pub fn step(&mut self, state: &mut SimState) -> Result<()> {
        let h = self.config.dt;
        let n = state.positions.len();
        self.apply_velocity_constraints(state);
        let x0 = &state.positions;
        let v0 = &state.velocities;

        self.acceleration(x0, v0).map_err(|e| self.blame(e, x0, state.t))?;
        for k in 0..n {
            self.sum_x[k] = v0[k];
            self.sum_v[k] = self.accel[k];
            self.stage_x[k] = x0[k] + v0[k] * (0.5 * h);
            self.stage_v[k] = v0[k] + self.accel[k] * (0.5 * h);
        }
        for (weight, next) in [(2.0, 0.5 * h), (2.0, h)] {
            let (sx, sv) = (std::mem::take(&mut self.stage_x), std::mem::take(&mut self.stage_v));
            self.acceleration(&sx, &sv).map_err(|e| self.blame(e, &sx, state.t))?;
            self.stage_x = sx;
            self.stage_v = sv;
            for k in 0..n {
                self.sum_x[k] += self.stage_v[k] * weight;
                self.sum_v[k] += self.accel[k] * weight;
                self.stage_x[k] = x0[k] + self.stage_v[k] * next;
                self.stage_v[k] = v0[k] + self.accel[k] * next;
            }
        }
        let (sx, sv) = (std::mem::take(&mut self.stage_x), std::mem::take(&mut self.stage_v));
        self.acceleration(&sx, &sv).map_err(|e| self.blame(e, &sx, state.t))?;
        self.stage_x = sx;
        self.stage_v = sv;
        for k in 0..n {
            self.sum_x[k] += self.stage_v[k];
            self.sum_v[k] += self.accel[k];
        }
        for k in 0..n {
            state.positions[k] += self.sum_x[k] * (h / 6.0);
            state.velocities[k] += self.sum_v[k] * (h / 6.0);
        }
        state.t += h;
        self.apply_velocity_constraints(state);
        if !state.is_finite() {
            return Err(Error::Divergence {
                time: state.t,
                max_displacement: state.max_displacement(self.mesh),
            });
        }
        Ok(())
    }

    /// Current folding angles of `hinges`, unwrapped to within π of each
    /// rest angle so a crease folded through flat reads slightly below 0
    /// (or above 2π) instead of jumping across the branch cut.
    pub fn read_angles(&self, positions: &[Vec3], hinges: &[usize], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for &h in hinges {
            let hinge = &self.mesh.hinges[h];
            let phi = dihedral_angle(positions, hinge, h)?;
            out.push(hinge.rest_angle + angle_offset(phi, hinge.rest_angle));
        }
        Ok(())
    }

    /// Runs for `duration`, recording `sensors` every `record_stride` steps
    /// and asking `controller` for new targets at each recorded sample
    /// (zero-order hold in between).
    pub fn run<C: Controller + ?Sized>(
        &mut self,
        state: &mut SimState,
        sensors: &[usize],
        controller: &mut C,
        duration: f64,
    ) -> Result<ReservoirTrace> {
        self.run_with(state, sensors, controller, &mut NoHook, duration)
    }

    /// As [`Simulator::run`], calling `hook` before every step.
    pub fn run_with<C: Controller + ?Sized, H: StepHook + ?Sized>(
        &mut self,
        state: &mut SimState,
        sensors: &[usize],
        controller: &mut C,
        hook: &mut H,
        duration: f64,
    ) -> Result<ReservoirTrace> {
        if !(duration >= 0.0) {
            return Err(Error::config("duration", "must be non-negative"));
        }
        let steps = self.config.steps_for(duration);
        let stride = self.config.record_stride;
        let mut trace = ReservoirTrace::with_capacity(sensors.to_vec(), steps / stride + 1);
        let mut reading = Vec::with_capacity(sensors.len());
        let mut targets = self.targets.clone();
        for k in 0..steps {
            if k % stride == 0 {
                self.read_angles(&state.positions, sensors, &mut reading)?;
                trace.push(state.t, &reading);
                controller.command(state.t, &reading, &mut targets)?;
                self.targets.copy_from_slice(&targets);
            }
            hook.before_step(k, state, &mut self.planar_lock)?;
            self.step(state)?;
        }
        Ok(trace)
    }

    /// Kinetic, truss and hinge energy (J). Hinge energy uses the stiffness
    /// at the current axis length and the current actuation targets.
    pub fn energy(&self, state: &SimState) -> Result<Energy> {
        let mesh = self.mesh;
        let x = &state.positions;
        let kinetic = state
            .velocities
            .iter()
            .zip(&mesh.masses)
            .map(|(v, m)| 0.5 * m * v.norm_squared())
            .sum();
        let mut stretch = 0.0;
        for t in &mesh.trusses {
            let l = (x[t.i] - x[t.j]).norm();
            // Potential of the force -(EA/l)(l - l0).
            stretch += t.ea * (l - t.rest_length - t.rest_length * (l / t.rest_length).ln());
        }
        let mut hinge = 0.0;
        for (k, h) in mesh.hinges.iter().enumerate() {
            let f = hinge_frame_from_points(&x[h.p], &x[h.q], &x[h.r], &x[h.v])
                .ok_or(Error::DegenerateHinge { hinge: k })?;
            let (per_length, reference) = match self.slots[k] {
                Some(s) => (mesh.material.k_actuated, self.targets[s]),
                None => (h.stiffness, h.rest_angle),
            };
            hinge += 0.5 * per_length * f.axis_length * angle_offset(f.angle, reference).powi(2);
        }
        Ok(Energy { kinetic, stretch, hinge })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub stretch: f64,
    pub hinge: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.stretch + self.hinge
    }
}

/// One integration step of `state` under `command`.
pub fn step(
    mesh: &OrigamiMesh,
    state: &SimState,
    config: &SimConfig,
    command: &ActuationCommand,
) -> Result<SimState> {
    let mut sim = Simulator::new(mesh, config, &command.hinges)?;
    sim.set_command(command)?;
    let mut next = state.clone();
    sim.step(&mut next)?;
    Ok(next)
}

/// Simulates from rest, recording `sensors`.
pub fn simulate<C: Controller + ?Sized>(
    mesh: &OrigamiMesh,
    config: &SimConfig,
    actuated: &[usize],
    sensors: &[usize],
    controller: &mut C,
    duration: f64,
) -> Result<ReservoirTrace> {
    if !(duration > 0.0) {
        return Err(Error::config("duration", "must be positive"));
    }
    let mut sim = Simulator::new(mesh, config, actuated)?;
    let mut state = SimState::at_rest(mesh);
    sim.run(&mut state, sensors, controller, duration)
}

/// Controller that leaves every actuated hinge at its rest angle.
pub fn hold_rest(_t: f64, _sensors: &[f64], _targets: &mut [f64]) -> Result<()> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{build_miura, Material, MiuraDesign, Truss};

    fn mesh(n: usize) -> OrigamiMesh {
        build_miura(&MiuraDesign::default().with_size(n, n), &Material::default()).unwrap()
    }

    #[test]
    fn equilibrium_is_preserved() {
        let m = mesh(4);
        let state = SimState::at_rest(&m);
        let cmd = ActuationCommand::new(vec![], vec![]).unwrap();
        let next = step(&m, &state, &SimConfig::default(), &cmd).unwrap();
        for (a, b) in next.positions.iter().zip(&state.positions) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn free_fall_matches_ballistic() {
        let m = OrigamiMesh {
            positions: vec![Vec3::zeros()],
            masses: vec![0.007],
            trusses: vec![],
            hinges: vec![],
            material: Material::default(),
        };
        let config = SimConfig {
            gravity: [0.0, 0.0, -9.81],
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&m, &config, &[]).unwrap();
        let mut s = SimState::at_rest(&m);
        for _ in 0..1000 {
            sim.step(&mut s).unwrap();
        }
        assert!((s.positions[0].z + 4.905).abs() < 1e-6, "{}", s.positions[0].z);
        assert!((s.t - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pinned_nodes_stay() {
        let m = mesh(3);
        let config = SimConfig {
            gravity: [0.0, 0.0, -9.81],
            ..SimConfig::default()
        }
        .pin_corner_facet(3);
        let mut sim = Simulator::new(&m, &config, &[]).unwrap();
        let mut s = SimState::at_rest(&m);
        for _ in 0..200 {
            sim.step(&mut s).unwrap();
        }
        for &p in &config.pinned_nodes {
            assert_eq!(s.positions[p], m.positions[p]);
        }
        assert!(s.positions[8].z < m.positions[8].z);
    }

    #[test]
    fn record_count_and_stride() {
        let m = mesh(3);
        let sensors = m.crease_ids();
        let trace = simulate(&m, &SimConfig::default(), &[], &sensors, &mut hold_rest, 0.5).unwrap();
        assert_eq!(trace.len(), 500);
        let cfg = SimConfig { record_stride: 4, ..SimConfig::default() };
        let trace = simulate(&m, &cfg, &[], &sensors, &mut hold_rest, 0.5).unwrap();
        assert_eq!(trace.len(), 125);
        for r in 0..trace.len() {
            for (c, &h) in sensors.iter().enumerate() {
                assert!((trace.row(r)[c] - m.hinges[h].rest_angle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let m = OrigamiMesh {
            positions: vec![Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)],
            masses: vec![1e-3, 1e-3],
            trusses: vec![Truss { i: 0, j: 1, rest_length: 0.01, ea: 1.0 }],
            hinges: vec![],
            material: Material::default(),
        };
        let mut sim = Simulator::new(&m, &SimConfig::default(), &[]).unwrap();
        let mut s = SimState::at_rest(&m);
        s.velocities[1].x = f64::MAX;
        let err = sim.step(&mut s).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn command_validation() {
        let m = mesh(4);
        let ids = m.crease_ids();
        assert!(ActuationCommand::new(vec![ids[0]], vec![7.0]).is_err());
        assert!(ActuationCommand::new(vec![ids[0]], vec![1.0, 2.0]).is_err());
        let mut sim = Simulator::new(&m, &SimConfig::default(), &ids[..2]).unwrap();
        let cmd = ActuationCommand::new(vec![ids[3]], vec![1.0]).unwrap();
        assert!(sim.set_command(&cmd).is_err());
    }

    #[test]
    fn zero_net_damping_removes_only_the_net_force() {
        let m = mesh(3);
        let x: Vec<Vec3> = m.positions.clone();
        let v: Vec<Vec3> = (0..m.node_count()).map(|i| Vec3::new(0.01 * i as f64, -0.02, 0.005 * (i % 3) as f64)).collect();
        let free = SimConfig { pinned_nodes: vec![], ..SimConfig::default() };
        let mut plain = Simulator::new(&m, &free, &[]).unwrap();
        let f0 = plain.total_forces(&x, &v).unwrap();
        let zero = SimConfig { zero_net_damping: true, ..free };
        let mut balanced = Simulator::new(&m, &zero, &[]).unwrap();
        let f1 = balanced.total_forces(&x, &v).unwrap();
        // At rest positions the elastic forces vanish, so the damping sum is all that remains.
        assert!(f0.iter().sum::<Vec3>().norm() > 1e-6);
        assert!(f1.iter().sum::<Vec3>().norm() < 1e-12);
        let net = f0.iter().sum::<Vec3>() / m.total_mass();
        for ((a, b), mass) in f0.iter().zip(&f1).zip(&m.masses) {
            assert!((a - net * *mass - b).norm() < 1e-12);
        }
    }
}
