//! End-to-end pipelines built from the reservoir primitives: filter
//! emulation, pattern generation with long-run and outage checks, and output
//! modulation by an auxiliary input.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dynamics::{SimConfig, SimState};
use crate::error::{Error, Result};
use crate::pattern::OrigamiMesh;
use crate::reservoir::{
    aligned_mse, closed_loop, failure_test, mse_multi, teacher_force, train_readout, weight_bound, ActuatorGroup,
    FailureReport, LoopOptions, ReadoutWeights, RecoveryWindow, RoleAssignment, TrainSpec,
};
use crate::sweep::Protocol;
use crate::tasks::{emulation_signals, modulated_quad, pattern_reference, EpsilonSchedule, Signal, EMU_DT};

/// Writes `t, target_0.., output_0..` rows, starting at `t0`.
pub fn write_overlay_csv<W: Write>(out: W, t0: f64, dt: f64, targets: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<()> {
    if targets.len() != outputs.len() {
        return Err(Error::LengthMismatch("target and output channel counts differ".into()));
    }
    let n = outputs.iter().map(Vec::len).min().unwrap_or(0);
    if targets.iter().any(|t| t.len() < n) {
        return Err(Error::LengthMismatch("targets shorter than outputs".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..targets.len()).map(|k| format!("target_{k}")));
    header.extend((0..outputs.len()).map(|k| format!("output_{k}")));
    w.write_record(&header)?;
    for r in 0..n {
        let mut row = vec![(t0 + r as f64 * dt).to_string()];
        row.extend(targets.iter().map(|c| c[r].to_string()));
        row.extend(outputs.iter().map(|c| c[r].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmulationRun {
    pub weights: ReadoutWeights,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
    pub targets: Signal,
    /// Readout applied to every recorded row.
    pub outputs: Vec<Vec<f64>>,
}

/// Drives the input creases with the emulation input for `duration` and
/// fits the three filter targets at once.
pub fn emulation(mesh: &OrigamiMesh, roles: &RoleAssignment, duration: f64, spec: &TrainSpec, config: &SimConfig) -> Result<EmulationRun> {
    if (config.sample_dt() - EMU_DT).abs() > 1e-15 {
        return Err(Error::config("sim.record_stride", format!("emulation samples at {EMU_DT} s")));
    }
    if !roles.feedback.is_empty() {
        return Err(Error::InvalidRoles("emulation uses no feedback creases".into()));
    }
    let n = config.steps_for(duration) / config.record_stride + 1;
    let (u, targets) = emulation_signals(n)?;
    let (trace, _) = teacher_force(mesh, roles, &[], Some(&u), duration, config)?;
    let fit = train_readout(&trace, &targets.channels, spec)?;
    let mut outputs = vec![Vec::with_capacity(trace.len()); targets.channels.len()];
    let mut z = vec![0.0; targets.channels.len()];
    for r in 0..trace.len() {
        fit.weights.apply(trace.row(r), &mut z);
        for (o, v) in outputs.iter_mut().zip(&z) {
            o.push(*v);
        }
    }
    Ok(EmulationRun { weights: fit.weights, train_mse: fit.train_mse, test_mse: fit.test_mse, targets, outputs })
}

/// Autonomous run that keeps only the outputs; the trace is dropped every
/// `chunk` seconds so hour-long runs stay small. Chunk boundaries fall on
/// samples, so the result equals one uninterrupted run.
#[allow(clippy::too_many_arguments)]
pub fn long_closed_loop(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    weights: &ReadoutWeights,
    duration: f64,
    chunk: f64,
    initial: &SimState,
    config: &SimConfig,
    options: &LoopOptions,
) -> Result<(Vec<Vec<f64>>, SimState)> {
    if options.outage.is_some() {
        return Err(Error::config("outage", "not supported in chunked runs"));
    }
    let total = config.steps_for(duration);
    let per = config.steps_for(chunk).max(config.record_stride) / config.record_stride * config.record_stride;
    let mut outputs = vec![Vec::new(); roles.feedback.len()];
    let mut state = initial.clone();
    let mut done = 0;
    while done < total {
        let steps = per.min(total - done);
        let run = closed_loop(mesh, roles, weights, None, steps as f64 * config.dt, &state, config, options)?;
        for (o, r) in outputs.iter_mut().zip(run.outputs) {
            o.extend(r);
        }
        state = run.final_state;
        done += steps;
    }
    Ok((outputs, state))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternRun {
    pub weights: ReadoutWeights,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
    /// Reference over training and closed loop, at the sample rate.
    pub reference: Signal,
    /// Samples recorded during training.
    pub train_len: usize,
    pub outputs: Vec<Vec<f64>>,
    /// Closed-loop MSE over the protocol's scoring window.
    pub mse: f64,
    pub train_state: SimState,
}

/// Teacher forcing, readout fit and a closed loop of `duration` continued
/// from the final training state.
pub fn pattern(mesh: &OrigamiMesh, roles: &RoleAssignment, protocol: &Protocol, duration: f64, seed: u64) -> Result<PatternRun> {
    if duration < protocol.score_window {
        return Err(Error::config("duration", "shorter than the scoring window"));
    }
    let reference = protocol.reference(duration)?;
    let spec = TrainSpec { seed, ..protocol.train };
    let (trace, state) = teacher_force(mesh, roles, &reference.channels, None, protocol.train_duration, &protocol.sim)?;
    let fit = train_readout(&trace, &reference.channels, &spec)?;
    let options = LoopOptions { output_bound: protocol.failure_factor * reference.amplitude(), outage: None };
    let run = closed_loop(mesh, roles, &fit.weights, None, duration, &state, &protocol.sim, &options)?;
    let start = trace.len();
    let window = (protocol.score_window / protocol.sim.sample_dt()).round() as usize;
    let mse = mse_multi(&reference.window(start, window)?, &run.outputs, window)?;
    Ok(PatternRun {
        weights: fit.weights,
        train_mse: fit.train_mse,
        test_mse: fit.test_mse,
        reference,
        train_len: start,
        outputs: run.outputs,
        mse,
        train_state: state,
    })
}

/// Settled target cycle long enough for `samples` rows.
fn cycle(protocol: &Protocol, samples: usize) -> Result<Vec<Vec<f64>>> {
    let stride = protocol.sim.record_stride;
    let s = pattern_reference(protocol.task, protocol.sim.dt, samples * stride)?;
    Ok(s.channels.into_iter().map(|c| c.into_iter().step_by(stride).collect()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Phase-aligned MSE over the first window of the warm closed loop.
    pub warm_mse: f64,
    /// Phase-aligned MSE over the last window of the run from rest.
    pub trailing_mse: f64,
    pub duration: f64,
    pub stable: bool,
}

/// Closed loop from total rest for `duration`; the trailing window is
/// compared with the warm start in `run`.
pub fn stability(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    run: &PatternRun,
    protocol: &Protocol,
    duration: f64,
    recovery: &RecoveryWindow,
) -> Result<(StabilityReport, Vec<Vec<f64>>)> {
    let dt = protocol.sim.sample_dt();
    let window = (recovery.window / dt).round() as usize;
    let shift = (recovery.max_shift / dt).round() as usize;
    let target = cycle(protocol, window + shift)?;
    if run.outputs.iter().any(|o| o.len() < window) {
        return Err(Error::LengthMismatch("warm run shorter than the window".into()));
    }
    let (warm_mse, _) = aligned_mse(&target, &run.outputs, window, shift)?;
    let options = LoopOptions { output_bound: protocol.failure_factor * run.reference.amplitude(), outage: None };
    let outcome = long_closed_loop(mesh, roles, &run.weights, duration, 50.0, &SimState::at_rest(mesh), &protocol.sim, &options);
    let outputs = match outcome {
        Ok((o, _)) => o,
        Err(Error::OutputDivergence { .. } | Error::Divergence { .. }) => {
            let report = StabilityReport { warm_mse, trailing_mse: f64::INFINITY, duration, stable: false };
            return Ok((report, Vec::new()));
        }
        Err(e) => return Err(e),
    };
    let n = outputs[0].len();
    if n < window {
        return Err(Error::LengthMismatch("run shorter than the window".into()));
    }
    let tail: Vec<Vec<f64>> = outputs.iter().map(|o| o[n - window..].to_vec()).collect();
    let (trailing_mse, _) = aligned_mse(&target, &tail, window, shift)?;
    let stable = trailing_mse <= recovery.factor * warm_mse.max(f64::MIN_POSITIVE);
    Ok((StabilityReport { warm_mse, trailing_mse, duration, stable }, outputs))
}

/// Outage of `length` seconds starting `start` seconds into a closed loop
/// continued from the training state.
pub fn recovery(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    run: &PatternRun,
    protocol: &Protocol,
    start: f64,
    length: f64,
    window: &RecoveryWindow,
) -> Result<FailureReport> {
    let duration = start + length + window.settle + window.window;
    let dt = protocol.sim.sample_dt();
    let target = cycle(protocol, ((window.window + window.max_shift) / dt).round() as usize)?;
    failure_test(mesh, roles, &run.weights, &run.train_state, &protocol.sim, (start, start + length), duration, &target, window)
}

/// Copy of `roles` with `fraction` of the creases outside every group
/// driven as input creases with random weights.
pub fn with_input(mesh: &OrigamiMesh, roles: &RoleAssignment, fraction: f64, seed: u64) -> Result<RoleAssignment> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidRoles(format!("input fraction {fraction} outside [0, 1]")));
    }
    let creases = mesh.crease_ids();
    let taken = roles.actuated();
    let mut free: Vec<usize> = creases.iter().copied().filter(|h| !taken.contains(h)).collect();
    let n = (fraction * creases.len() as f64).round() as usize;
    if n > free.len() {
        return Err(Error::InvalidRoles("not enough free creases for the input group".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    free.shuffle(&mut rng);
    let hinges = free[..n].to_vec();
    let weights = hinges
        .iter()
        .map(|&h| {
            let w = weight_bound(mesh.hinges[h].rest_angle);
            rng.random_range(-w..=w)
        })
        .collect();
    let out = RoleAssignment { input: ActuatorGroup { hinges, weights }, ..roles.clone() };
    out.validate(mesh)?;
    Ok(out)
}

/// Cycle size at one schedule level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelAmplitude {
    pub epsilon: f64,
    /// Largest `|x|` of the reference over the settled half of each dwell.
    pub target: f64,
    pub output: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationRun {
    pub weights: ReadoutWeights,
    pub train_mse: Vec<f64>,
    /// Shape parameter over the closed loop.
    pub epsilon: Vec<f64>,
    /// Reference over the closed loop.
    pub targets: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// Combined MSE over the whole closed loop.
    pub mse: f64,
    /// One entry per distinct level, sorted by `epsilon`.
    pub amplitudes: Vec<LevelAmplitude>,
}

impl ModulationRun {
    /// Output cycles shrink strictly as the level grows.
    pub fn amplitude_tracks_epsilon(&self) -> bool {
        self.amplitudes.windows(2).all(|w| w[1].epsilon > w[0].epsilon && w[1].output < w[0].output)
    }
}

/// Trains the quadratic cycle under `schedule` with `ε(t)` fed to the input
/// creases, then runs the loop for `duration` with the input continued.
pub fn modulation(
    mesh: &OrigamiMesh,
    roles: &RoleAssignment,
    schedule: &EpsilonSchedule,
    train_duration: f64,
    duration: f64,
    spec: &TrainSpec,
    config: &SimConfig,
    failure_factor: f64,
) -> Result<ModulationRun> {
    if roles.input.hinges.is_empty() || roles.feedback.len() != 2 {
        return Err(Error::InvalidRoles("modulation needs input creases and two feedback groups".into()));
    }
    let stride = config.record_stride;
    let n_train = config.steps_for(train_duration) / stride;
    let n_loop = config.steps_for(duration) / stride;
    let (eps, reference) = modulated_quad(schedule, config.dt, (n_train + n_loop + 1) * stride)?;
    let eps: Vec<f64> = eps.into_iter().step_by(stride).collect();
    let reference: Vec<Vec<f64>> = reference.channels.into_iter().map(|c| c.into_iter().step_by(stride).collect()).collect();
    let (trace, state) = teacher_force(mesh, roles, &reference, Some(&eps), train_duration, config)?;
    let fit = train_readout(&trace, &reference, spec)?;
    let start = trace.len();
    let amplitude = reference.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let options = LoopOptions { output_bound: failure_factor * amplitude, outage: None };
    let run = closed_loop(mesh, roles, &fit.weights, Some(&eps[start..]), duration, &state, config, &options)?;
    let targets: Vec<Vec<f64>> = reference.iter().map(|c| c[start..start + n_loop].to_vec()).collect();
    let mse = mse_multi(&targets, &run.outputs, n_loop)?;
    let amplitudes = level_amplitudes(schedule, config.sample_dt(), start, &targets, &run.outputs);
    Ok(ModulationRun {
        weights: fit.weights,
        train_mse: fit.train_mse,
        epsilon: eps[start..start + n_loop].to_vec(),
        targets,
        outputs: run.outputs,
        mse,
        amplitudes,
    })
}

/// Peak `|x|` over the second half of every complete dwell, averaged per
/// level.
fn level_amplitudes(schedule: &EpsilonSchedule, dt: f64, offset: usize, targets: &[Vec<f64>], outputs: &[Vec<f64>]) -> Vec<LevelAmplitude> {
    let dwell = (schedule.dwell / dt).round() as usize;
    let n = outputs[0].len().min(targets[0].len());
    let peak = |s: &[Vec<f64>], a: usize, b: usize| {
        (a..b).map(|k| s[0][k].hypot(s[1][k])).fold(0.0f64, f64::max)
    };
    let mut acc: Vec<(f64, f64, f64, usize)> = Vec::new();
    let first = offset.div_ceil(dwell) * dwell;
    let mut seg = first;
    while seg + dwell <= offset + n {
        let (a, b) = (seg + dwell / 2 - offset, seg + dwell - offset);
        let level = schedule.at(seg as f64 * dt + 0.5 * dt);
        let (t, o) = (peak(targets, a, b), peak(outputs, a, b));
        match acc.iter_mut().find(|e| e.0 == level) {
            Some(e) => {
                e.1 += t;
                e.2 += o;
                e.3 += 1;
            }
            None => acc.push((level, t, o, 1)),
        }
        seg += dwell;
    }
    let mut out: Vec<LevelAmplitude> = acc
        .into_iter()
        .map(|(epsilon, t, o, c)| LevelAmplitude { epsilon, target: t / c as f64, output: o / c as f64 })
        .collect();
    out.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
    out
}
