//! Crease roles, teacher forcing, readout training and the autonomous loop.
//!
//! Actuated hinges take the commanded rest angle `φ⁰ + W·tanh(s)`, where `s`
//! is the input signal for input creases and the (reference or produced)
//! output of their group for feedback creases.

mod readout;
mod trace;

pub use readout::{
    aligned_mse, mse, mse_multi, solve_least_squares, train_readout, ReadoutChannel, ReadoutWeights,
    TrainOutcome, TrainSpec, PINV_RCOND,
};
pub use trace::ReservoirTrace;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::{Controller, SimConfig, SimState, Simulator};
use crate::error::{Error, Result};
use crate::pattern::OrigamiMesh;

/// Fractions of the crease count assigned to each role.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleFractions {
    pub input: f64,
    /// Total feedback fraction, split evenly over `groups`.
    pub feedback: f64,
    pub groups: usize,
    pub sensor: f64,
}

impl RoleFractions {
    /// Input-driven emulation: 15% input creases, every crease sensed.
    pub fn emulation() -> Self {
        Self { input: 0.15, feedback: 0.0, groups: 0, sensor: 1.0 }
    }

    /// Two-channel pattern generation: 30% feedback creases.
    pub fn pattern() -> Self {
        Self { input: 0.0, feedback: 0.3, groups: 2, sensor: 1.0 }
    }

    /// Pattern generation with an additional 15% input creases.
    pub fn modulation() -> Self {
        Self { input: 0.15, feedback: 0.3, groups: 2, sensor: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorGroup {
    pub hinges: Vec<usize>,
    /// Per-hinge weight (rad).
    pub weights: Vec<f64>,
}

impl ActuatorGroup {
    fn validate(&self, what: &str) -> Result<()> {
        if self.hinges.len() != self.weights.len() {
            return Err(Error::InvalidRoles(format!("{what}: hinge and weight counts differ")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub input: ActuatorGroup,
    /// One group per output channel.
    pub feedback: Vec<ActuatorGroup>,
    pub sensor_hinges: Vec<usize>,
    pub seed: u64,
}

/// Largest `|W|` keeping `φ⁰ + W·tanh(s)` inside `[0, 2π]`.
pub fn weight_bound(rest_angle: f64) -> f64 {
    rest_angle.min(2.0 * PI - rest_angle).max(0.0)
}

/// Random disjoint role selection over the crease hinges of `mesh`.
pub fn assign_roles(mesh: &OrigamiMesh, fractions: &RoleFractions, seed: u64) -> Result<RoleAssignment> {
    for (name, f) in [
        ("input", fractions.input),
        ("feedback", fractions.feedback),
        ("sensor", fractions.sensor),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidRoles(format!("{name} fraction {f} outside [0, 1]")));
        }
    }
    if fractions.input + fractions.feedback > 1.0 + 1e-12 {
        return Err(Error::InvalidRoles("actuated fractions exceed 1".into()));
    }
    if fractions.feedback > 0.0 && fractions.groups == 0 {
        return Err(Error::InvalidRoles("feedback fraction needs at least one group".into()));
    }
    let creases = mesh.crease_ids();
    let n = creases.len();
    let count = |f: f64| (f * n as f64).round() as usize;
    let n_in = count(fractions.input);
    let n_fb = count(fractions.feedback);
    let n_s = count(fractions.sensor);
    if fractions.input > 0.0 && n_in == 0 {
        return Err(Error::InvalidRoles("input fraction selects no creases".into()));
    }
    if n_s == 0 {
        return Err(Error::InvalidRoles("sensor fraction selects no creases".into()));
    }
    if n_fb < fractions.groups && fractions.feedback > 0.0 {
        return Err(Error::InvalidRoles("feedback fraction leaves a group empty".into()));
    }
    if n_in + n_fb > n {
        return Err(Error::InvalidRoles("not enough creases for the requested roles".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = creases.clone();
    pool.shuffle(&mut rng);
    let draw = |ids: &[usize], rng: &mut ChaCha8Rng| ActuatorGroup {
        hinges: ids.to_vec(),
        weights: ids
            .iter()
            .map(|&h| {
                let w = weight_bound(mesh.hinges[h].rest_angle);
                rng.random_range(-w..=w)
            })
            .collect(),
    };
    let input = draw(&pool[..n_in], &mut rng);
    let mut feedback = Vec::with_capacity(fractions.groups);
    let mut start = n_in;
    for g in 0..fractions.groups {
        let size = n_fb / fractions.groups + usize::from(g < n_fb % fractions.groups);
        feedback.push(draw(&pool[start..start + size], &mut rng));
        start += size;
    }
    let sensor_hinges = if n_s == n {
        creases
    } else {
        let mut s = creases.clone();
        s.shuffle(&mut rng);
        s.truncate(n_s);
        s.sort_unstable();
        s
    };
    let roles = RoleAssignment { input, feedback, sensor_hinges, seed };
    roles.validate(mesh)?;
    Ok(roles)
}

impl RoleAssignment {
    /// Input hinges followed by every feedback group, in order.
    pub fn actuated(&self) -> Vec<usize> {
        let mut out = self.input.hinges.clone();
        for g in &self.feedback {
            out.extend_from_slice(&g.hinges);
        }
        out
    }

    pub fn feedback_hinges(&self) -> Vec<usize> {
        self.feedback.iter().flat_map(|g| g.hinges.iter().copied()).collect()
    }

    pub fn with_sensors(mut self, sensors: Vec<usize>) -> Self {
        self.sensor_hinges = sensors;
        self
    }

    pub fn validate(&self, mesh: &OrigamiMesh) -> Result<()> {
        self.input.validate("input")?;
        for g in &self.feedback {
            g.validate("feedback")?;
            if g.hinges.is_empty() {
                return Err(Error::InvalidRoles("empty feedback group".into()));
            }
        }
        let creases = mesh.crease_ids();
        let is_crease = |h: &usize| creases.binary_search(h).is_ok();
        let mut actuated = self.actuated();
        if !actuated.iter().all(is_crease) || !self.sensor_hinges.iter().all(is_crease) {
            return Err(Error::InvalidRoles("roles must name crease hinges".into()));
        }
        actuated.sort_unstable();
        if actuated.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidRoles("role sets overlap".into()));
        }
        if self.sensor_hinges.is_empty() {
            return Err(Error::InvalidRoles("no sensor creases".into()));
        }
        Ok(())
    }
}

/// Signal sources for one run; every series is indexed by recorded sample.
#[derive(Clone, Copy, Debug)]
pub enum Feedback<'a> {
    /// Open loop: each group receives its reference series.
    Teacher(&'a [Vec<f64>]),
    /// Closed loop through the readout.
    Readout(&'a ReadoutWeights),
}

/// Options of the autonomous loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOptions {
    /// `|z*|` above this aborts the run.
    pub output_bound: f64,
    /// Sensor and feedback outage `[on, off)` in seconds from loop start.
    pub outage: Option<(f64, f64)>,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self { output_bound: 1e3, outage: None }
    }
}

pub(crate) struct Drive<'a> {
    input_rest: Vec<f64>,
    input_weights: &'a [f64],
    input: Option<&'a [f64]>,
    groups: Vec<(usize, Vec<f64>, &'a [f64])>,
    feedback: Feedback<'a>,
    options: LoopOptions,
    outage_samples: Option<(usize, usize)>,
    k: usize,
    scratch: Vec<f64>,
    zeros: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl<'a> Drive<'a> {
    pub(crate) fn new(
        mesh: &OrigamiMesh,
        roles: &'a RoleAssignment,
        input: Option<&'a [f64]>,
        feedback: Feedback<'a>,
        options: LoopOptions,
        sample_dt: f64,
    ) -> Result<Self> {
        let rest = |ids: &[usize]| ids.iter().map(|&h| mesh.hinges[h].rest_angle).collect::<Vec<_>>();
        let mut groups = Vec::new();
        let mut offset = roles.input.hinges.len();
        for g in &roles.feedback {
            groups.push((offset, rest(&g.hinges), g.weights.as_slice()));
            offset += g.hinges.len();
        }
        if !roles.input.hinges.is_empty() && input.is_none() {
            return Err(Error::InvalidRoles("input creases without an input signal".into()));
        }
        match feedback {
            Feedback::Teacher(z) if z.len() != roles.feedback.len() => {
                return Err(Error::LengthMismatch(format!(
                    "{} reference channels for {} feedback groups",
                    z.len(),
                    roles.feedback.len()
                )))
            }
            Feedback::Readout(w) => {
                w.validate()?;
                if w.n_channels() != roles.feedback.len() {
                    return Err(Error::LengthMismatch(format!(
                        "{} readout channels for {} feedback groups",
                        w.n_channels(),
                        roles.feedback.len()
                    )));
                }
                if w.sensor_hinges != roles.sensor_hinges {
                    return Err(Error::LengthMismatch("readout sensors differ from role sensors".into()));
                }
            }
            _ => {}
        }
        let outage_samples = options
            .outage
            .map(|(on, off)| ((on / sample_dt).round() as usize, (off / sample_dt).round() as usize));
        Ok(Self {
            input_rest: rest(&roles.input.hinges),
            input_weights: &roles.input.weights,
            input,
            groups,
            feedback,
            options,
            outage_samples,
            k: 0,
            scratch: vec![0.0; roles.feedback.len()],
            zeros: vec![0.0; roles.sensor_hinges.len()],
            outputs: vec![Vec::new(); roles.feedback.len()],
        })
    }

    pub(crate) fn into_outputs(self) -> Vec<Vec<f64>> {
        self.outputs
    }

    fn in_outage(&self) -> bool {
        self.outage_samples.is_some_and(|(on, off)| self.k >= on && self.k < off)
    }
}

fn sample(series: &[f64], k: usize, what: &str) -> Result<f64> {
    series
        .get(k)
        .copied()
        .ok_or_else(|| Error::LengthMismatch(format!("{what} signal ends at sample {}", series.len())))
}

fn command(rest: f64, weight: f64, signal: f64) -> f64 {
    (rest + weight * signal.tanh()).clamp(0.0, 2.0 * PI)
}

impl Controller for Drive<'_> {
    fn command(&mut self, t: f64, sensors: &[f64], targets: &mut [f64]) -> Result<()> {
        if let Some(u) = self.input {
            let u = sample(u, self.k, "input")?;
            for (i, (&r, &w)) in self.input_rest.iter().zip(self.input_weights).enumerate() {
                targets[i] = command(r, w, u);
            }
        }
        let outage = self.in_outage();
        match self.feedback {
            Feedback::Teacher(z) => {
                for (g, zs) in z.iter().enumerate() {
                    self.scratch[g] = sample(zs, self.k, "reference")?;
                }
            }
            Feedback::Readout(w) => {
                let s = if outage { &self.zeros[..] } else { sensors };
                w.apply(s, &mut self.scratch);
                if !outage {
                    if let Some(m) = self.scratch.iter().map(|v| v.abs()).find(|m| !(*m <= self.options.output_bound)) {
                        return Err(Error::OutputDivergence { time: t, magnitude: m });
                    }
                }
                for (out, z) in self.outputs.iter_mut().zip(&self.scratch) {
                    out.push(*z);
                }
            }
        }
        for (g, (offset, rest, weights)) in self.groups.iter().enumerate() {
            let signal = if outage { 0.0 } else { self.scratch[g] };
            for (i, (&r, &w)) in rest.iter().zip(weights.iter()).enumerate() {
                targets[offset + i] = command(r, w, signal);
            }
        }
        self.k += 1;
        Ok(())
    }
}

/// Open-loop run from rest with every feedback group driven by its
/// reference. Returns the trace and the final state.
pub fn teacher_force(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    teacher: &[Vec<f64>],
    input: Option<&[f64]>,
    duration: f64,
    config: &SimConfig,
) -> Result<(ReservoirTrace, SimState)> {
    roles.validate(mesh)?;
    let mut drive = Drive::new(mesh, roles, input, Feedback::Teacher(teacher), LoopOptions::default(), config.sample_dt())?;
    let mut sim = Simulator::new(mesh, config, &roles.actuated())?;
    let mut state = SimState::at_rest(mesh);
    let trace = sim.run(&mut state, &roles.sensor_hinges, &mut drive, duration)?;
    Ok((trace, state))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopRun {
    pub trace: ReservoirTrace,
    /// Produced output per channel, one value per recorded sample.
    pub outputs: Vec<Vec<f64>>,
    pub final_state: SimState,
}

/// Autonomous run from `initial`: each group is fed its own readout output.
/// `input` is indexed from the first sample of this run.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    weights: &ReadoutWeights,
    input: Option<&[f64]>,
    duration: f64,
    initial: &SimState,
    config: &SimConfig,
    options: &LoopOptions,
) -> Result<LoopRun> {
    roles.validate(mesh)?;
    let mut drive = Drive::new(mesh, roles, input, Feedback::Readout(weights), *options, config.sample_dt())?;
    let mut sim = Simulator::new(mesh, config, &roles.actuated())?;
    let mut state = initial.clone();
    let trace = sim.run(&mut state, &roles.sensor_hinges, &mut drive, duration)?;
    Ok(LoopRun {
        trace,
        outputs: drive.into_outputs(),
        final_state: state,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailureReport {
    pub run: LoopRun,
    /// Phase-aligned MSE over the window before the outage.
    pub pre_mse: f64,
    /// Phase-aligned MSE over the window starting `settle` after the outage.
    pub post_mse: f64,
    pub recovered: bool,
}

/// Closed loop with every sensor and feedback signal zeroed during
/// `outage`. Recovery compares phase-aligned MSEs of equal windows before
/// and after the outage against `reference`, a settled target cycle long
/// enough for `window + max_shift` samples. Recovered means the post-outage
/// MSE is within `factor` of the pre-outage MSE.
#[allow(clippy::too_many_arguments)]
pub fn failure_test(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    weights: &ReadoutWeights,
    initial: &SimState,
    config: &SimConfig,
    outage: (f64, f64),
    duration: f64,
    reference: &[Vec<f64>],
    recovery: &RecoveryWindow,
) -> Result<FailureReport> {
    if !(outage.0 >= 0.0 && outage.1 >= outage.0 && outage.1 <= duration) {
        return Err(Error::config("outage", "must lie within the run"));
    }
    let options = LoopOptions { outage: Some(outage), ..LoopOptions::default() };
    let run = closed_loop(mesh, roles, weights, None, duration, initial, config, &options)?;
    let dt = config.sample_dt();
    let window = (recovery.window / dt).round() as usize;
    let shift = (recovery.max_shift / dt).round() as usize;
    let slice = |from: f64| -> Result<Vec<Vec<f64>>> {
        let s = (from / dt).round() as usize;
        run.outputs
            .iter()
            .map(|o| {
                o.get(s..s + window)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::LengthMismatch("run too short for the recovery window".into()))
            })
            .collect()
    };
    let before = slice((outage.0 - recovery.window).max(0.0))?;
    let after = slice(outage.1 + recovery.settle)?;
    let (pre_mse, _) = aligned_mse(reference, &before, window, shift)?;
    let (post_mse, _) = aligned_mse(reference, &after, window, shift)?;
    let recovered = post_mse.is_finite() && post_mse <= recovery.factor * pre_mse.max(f64::MIN_POSITIVE);
    Ok(FailureReport { run, pre_mse, post_mse, recovered })
}

/// Scoring windows of [`failure_test`] (seconds).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryWindow {
    pub window: f64,
    pub settle: f64,
    pub max_shift: f64,
    pub factor: f64,
}

impl Default for RecoveryWindow {
    fn default() -> Self {
        Self { window: 10.0, settle: 10.0, max_shift: 8.0, factor: 10.0 }
    }
}
