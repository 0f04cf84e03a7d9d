//! Reference and input signals: emulation input and filters, limit cycles,
//! modulated cycles and phase-shifted gaits. All series are sampled on a
//! uniform grid starting at `t = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Sampling step of the emulation signals (s).
pub const EMU_DT: f64 = 1e-3;
const EMU_FREQS: [f64; 3] = [2.11, 3.73, 4.33];
const DIVERGENCE_BOUND: f64 = 1e6;

/// Multi-channel series on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub dt: f64,
    pub channels: Vec<Vec<f64>>,
}

impl Signal {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest absolute sample over every channel.
    pub fn amplitude(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn window(&self, start: usize, len: usize) -> Result<Vec<Vec<f64>>> {
        self.channels
            .iter()
            .map(|c| {
                c.get(start..start + len)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::LengthMismatch(format!("signal has {} samples, need {}", c.len(), start + len)))
            })
            .collect()
    }

    /// CSV with header `t,ch0,ch1,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.channels.len()).map(|k| format!("ch{k}")));
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut rec = vec![format!("{:e}", r as f64 * self.dt)];
            rec.extend(self.channels.iter().map(|c| format!("{:e}", c[r])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header = rd.headers()?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names.first() != Some(&"t") {
            return Err(Error::Parse("signal csv: first column must be `t`".into()));
        }
        for (k, n) in names[1..].iter().enumerate() {
            if *n != format!("ch{k}") {
                return Err(Error::Parse(format!("signal csv: column {} must be `ch{k}`, found `{n}`", k + 1)));
            }
        }
        let mut times = Vec::new();
        let mut channels = vec![Vec::new(); names.len() - 1];
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Parse("signal csv: ragged row".into()));
            }
            let mut vals = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("signal csv: bad number `{s}`")))
            });
            times.push(vals.next().expect("time column")?);
            for (c, v) in channels.iter_mut().zip(vals) {
                c.push(v?);
            }
        }
        let dt = match times.as_slice() {
            [a, b, ..] if b > a => b - a,
            [_, _, ..] => return Err(Error::Parse("signal csv: time must increase".into())),
            _ => EMU_DT,
        };
        Ok(Self { dt, channels })
    }
}

/// `u(j) = 0.2 Π sin(2π f_k j Δt)` with `Δt = 1 ms`.
pub fn emu_input(j: usize) -> f64 {
    let t = j as f64 * EMU_DT;
    0.2 * EMU_FREQS.iter().map(|f| (2.0 * PI * f * t).sin()).product::<f64>()
}

pub fn emu_input_series(n: usize) -> Vec<f64> {
    (0..n).map(emu_input).collect()
}

fn guard(z: f64, step: usize) -> Result<f64> {
    if z.is_finite() && z.abs() <= DIVERGENCE_BOUND {
        Ok(z)
    } else {
        Err(Error::SignalDivergence { step, magnitude: z.abs() })
    }
}

/// Second-order filter from zero history; output has the length of `u`.
pub fn order2_filter(u: &[f64]) -> Result<Vec<f64>> {
    let mut z = vec![0.0; u.len()];
    for j in 0..u.len().saturating_sub(1) {
        let prev = if j >= 1 { z[j - 1] } else { 0.0 };
        z[j + 1] = guard(0.4 * z[j] + 0.4 * z[j] * prev + 0.6 * u[j].powi(3) + 0.1, j + 1)?;
    }
    Ok(z)
}

/// Tenth-order filter from zero history; negative indices read zero.
pub fn order10_filter(u: &[f64]) -> Result<Vec<f64>> {
    let at = |s: &[f64], k: isize| if k >= 0 { s[k as usize] } else { 0.0 };
    let mut z = vec![0.0; u.len()];
    let mut window_sum = 0.0; // Σ_{i=1..10} z(j − i)
    for j in 0..u.len().saturating_sub(1) {
        let ji = j as isize;
        let z_prev = at(&z, ji - 1);
        let next = 0.3 * z_prev + 0.05 * z_prev * window_sum + 1.5 * at(u, ji - 10) * at(u, ji - 1) + 0.1;
        z[j + 1] = guard(next, j + 1)?;
        window_sum += z[j] - at(&z, ji - 10);
    }
    Ok(z)
}

/// Gaussian window of the Volterra kernel with its negative exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolterraKernel {
    pub mu: f64,
    pub sigma: f64,
    /// Upper lag index.
    pub window: usize,
    pub dt: f64,
    pub gain: f64,
}

impl Default for VolterraKernel {
    fn default() -> Self {
        Self { mu: 0.1, sigma: 0.05, window: 300, dt: EMU_DT, gain: 100.0 }
    }
}

impl VolterraKernel {
    pub fn g(&self, tau: usize) -> f64 {
        let x = tau as f64 * self.dt - self.mu;
        (-(x * x) / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn h(&self, tau1: usize, tau2: usize) -> f64 {
        self.g(tau1) * self.g(tau2)
    }
}

/// Volterra series via the separable kernel: `z(j+1) = gain·(Σ g(τ) u(j−τ))²`.
pub fn volterra_series(u: &[f64], kernel: &VolterraKernel) -> Vec<f64> {
    let g: Vec<f64> = (0..=kernel.window).map(|t| kernel.g(t)).collect();
    let mut z = vec![0.0; u.len()];
    for j in 0..u.len().saturating_sub(1) {
        let s: f64 = g.iter().take(j + 1).enumerate().map(|(tau, gt)| gt * u[j - tau]).sum();
        z[j + 1] = kernel.gain * s * s;
    }
    z
}

/// Volterra series by the explicit double sum over both lags.
pub fn volterra_direct(u: &[f64], kernel: &VolterraKernel) -> Vec<f64> {
    let mut z = vec![0.0; u.len()];
    let at = |k: isize| if k >= 0 { u[k as usize] } else { 0.0 };
    for j in 0..u.len().saturating_sub(1) {
        let mut acc = 0.0;
        for t1 in 0..=kernel.window {
            for t2 in 0..=kernel.window {
                acc += kernel.h(t1, t2) * at(j as isize - t1 as isize) * at(j as isize - t2 as isize);
            }
        }
        z[j + 1] = kernel.gain * acc;
    }
    z
}

/// Emulation input and its three filter targets over `n` samples.
pub fn emulation_signals(n: usize) -> Result<(Vec<f64>, Signal)> {
    let u = emu_input_series(n);
    let channels = vec![
        order2_filter(&u)?,
        order10_filter(&u)?,
        volterra_series(&u, &VolterraKernel::default()),
    ];
    Ok((u, Signal { dt: EMU_DT, channels }))
}

fn rk4_2d(f: impl Fn(f64, [f64; 2]) -> [f64; 2], x0: [f64; 2], dt: f64, n: usize, t0: f64) -> Result<Signal> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "must be positive"));
    }
    let mut x = x0;
    let mut out = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for k in 0..n {
        out[0].push(x[0]);
        out[1].push(x[1]);
        let t = t0 + k as f64 * dt;
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let k1 = f(t, x);
        let k2 = f(t + 0.5 * dt, add(x, k1, 0.5 * dt));
        let k3 = f(t + 0.5 * dt, add(x, k2, 0.5 * dt));
        let k4 = f(t + dt, add(x, k3, dt));
        for i in 0..2 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(Error::SignalDivergence { step: k + 1, magnitude: x[0].abs().max(x[1].abs()) });
        }
    }
    let [a, b] = out;
    Ok(Signal { dt, channels: vec![a, b] })
}

pub fn quad_rhs(eps: f64, x: [f64; 2]) -> [f64; 2] {
    let r2 = x[0] * x[0] + x[1] * x[1];
    [x[0] + x[1] - eps * x[0] * r2, -2.0 * x[0] + x[1] - x[1] * r2]
}

pub fn vdp_rhs(x: [f64; 2]) -> [f64; 2] {
    [x[1], -x[0] + (1.0 - x[0] * x[0]) * x[1]]
}

/// Quadratic limit cycle with a time-varying shape parameter.
pub fn quad_lc(eps: impl Fn(f64) -> f64, x0: [f64; 2], dt: f64, n: usize) -> Result<Signal> {
    rk4_2d(|t, x| quad_rhs(eps(t), x), x0, dt, n, 0.0)
}

pub fn vdp_lc(x0: [f64; 2], dt: f64, n: usize) -> Result<Signal> {
    rk4_2d(|_, x| vdp_rhs(x), x0, dt, n, 0.0)
}

/// `x₁ = sin(f₁t + δ)`, `x₂ = sin(f₂t)` with angular frequencies (rad/s).
pub fn lissajous(f1: f64, f2: f64, delta: f64, dt: f64, n: usize) -> Result<Signal> {
    if !(f2 > 0.0) {
        return Err(Error::config("task.f2", "must be positive"));
    }
    let t = |k: usize| k as f64 * dt;
    Ok(Signal {
        dt,
        channels: vec![
            (0..n).map(|k| (f1 * t(k) + delta).sin()).collect(),
            (0..n).map(|k| (f2 * t(k)).sin()).collect(),
        ],
    })
}

/// Channel `k` is `A sin(2πft − kπ/2)`.
pub fn harmonic_gait(n_channels: usize, freq: f64, amplitude: f64, dt: f64, n: usize) -> Result<Signal> {
    if n_channels < 2 {
        return Err(Error::config("gait.channels", "need at least two channels"));
    }
    harmonic_set(n_channels, freq, amplitude, FRAC_PI_2, dt, n)
}

/// Channel `k` is `A sin(2πft − k·step)`.
pub fn harmonic_set(n_channels: usize, freq: f64, amplitude: f64, step: f64, dt: f64, n: usize) -> Result<Signal> {
    let channels = (0..n_channels)
        .map(|k| {
            (0..n)
                .map(|j| amplitude * (2.0 * PI * freq * j as f64 * dt - k as f64 * step).sin())
                .collect()
        })
        .collect();
    Ok(Signal { dt, channels })
}

/// Piecewise-constant shape schedule cycling through `levels`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub levels: Vec<f64>,
    /// Hold time of each level (s).
    pub dwell: f64,
}

impl EpsilonSchedule {
    /// `count` levels drawn uniformly from `[lo, hi]`.
    pub fn random(count: usize, lo: f64, hi: f64, dwell: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            levels: (0..count).map(|_| rng.random_range(lo..=hi)).collect(),
            dwell,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = (t.max(0.0) / self.dwell).floor() as usize;
        self.levels[k % self.levels.len()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::config("task.epsilon.levels", "need positive levels"));
        }
        if !(self.dwell > 0.0) {
            return Err(Error::config("task.epsilon.dwell", "must be positive"));
        }
        Ok(())
    }

    pub fn series(&self, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.at(k as f64 * dt)).collect()
    }
}

/// Two-dimensional pattern-generation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternTask {
    QuadLc,
    VdpLc,
    Lissajous,
}

impl std::str::FromStr for PatternTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quad_lc" => Ok(Self::QuadLc),
            "vdp_lc" => Ok(Self::VdpLc),
            "lissajous" => Ok(Self::Lissajous),
            other => Err(Error::config("task", format!("unknown pattern task `{other}`"))),
        }
    }
}

impl PatternTask {
    pub fn name(self) -> &'static str {
        match self {
            Self::QuadLc => "quad_lc",
            Self::VdpLc => "vdp_lc",
            Self::Lissajous => "lissajous",
        }
    }
}

/// Time integrated from `(0.1, 0)` before a limit-cycle reference starts,
/// so the target begins on its cycle.
pub const SETTLE_TIME: f64 = 50.0;
/// Lissajous angular frequencies (rad/s) and phase.
pub const LISSAJOUS: (f64, f64, f64) = (1.0, 2.0, FRAC_PI_2);

/// Reference for `task` over `n` samples starting on the settled cycle.
pub fn pattern_reference(task: PatternTask, dt: f64, n: usize) -> Result<Signal> {
    let settle = (SETTLE_TIME / dt).round() as usize;
    let trimmed = |s: Signal| Signal {
        dt: s.dt,
        channels: s.channels.into_iter().map(|c| c[settle..].to_vec()).collect(),
    };
    match task {
        PatternTask::QuadLc => quad_lc(|_| 1.0, [0.1, 0.0], dt, settle + n).map(trimmed),
        PatternTask::VdpLc => vdp_lc([0.1, 0.0], dt, settle + n).map(trimmed),
        PatternTask::Lissajous => lissajous(LISSAJOUS.0, LISSAJOUS.1, LISSAJOUS.2, dt, n),
    }
}

/// Quadratic cycle under `schedule`, after settling at the schedule's
/// first level. Returns the schedule series and the reference.
pub fn modulated_quad(schedule: &EpsilonSchedule, dt: f64, n: usize) -> Result<(Vec<f64>, Signal)> {
    schedule.validate()?;
    let first = schedule.levels[0];
    let settle = (SETTLE_TIME / dt).round() as usize;
    let pre = quad_lc(|_| first, [0.1, 0.0], dt, settle + 1)?;
    let x0 = [pre.channels[0][settle], pre.channels[1][settle]];
    let reference = quad_lc(|t| schedule.at(t), x0, dt, n)?;
    Ok((schedule.series(dt, n), reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emu_input_examples() {
        assert_eq!(emu_input(0), 0.0);
        let expect = 0.2
            * (2.0 * PI * 2.11 * 0.25f64).sin()
            * (2.0 * PI * 3.73 * 0.25f64).sin()
            * (2.0 * PI * 4.33 * 0.25f64).sin();
        assert!((emu_input(250) - expect).abs() < 1e-15);
        assert!(emu_input_series(20000).iter().all(|u| u.abs() <= 0.2));
    }

    #[test]
    fn order2_examples() {
        let z = order2_filter(&[0.0; 5000]).unwrap();
        assert!((z[1] - 0.1).abs() < 1e-15);
        assert!((z[2] - 0.14).abs() < 1e-15);
        let fixed = (0.6 - 0.2f64.sqrt()) / 0.8;
        assert!((z[4999] - fixed).abs() < 1e-12);
        assert!((fixed - 0.190983).abs() < 1e-6);
    }

    #[test]
    fn order10_examples() {
        let z = order10_filter(&[0.0; 100_000]).unwrap();
        assert_eq!(z[1], 0.1);
        assert_eq!(z[2], 0.1);
        // Fixed point of z = 0.3z + 0.5z² + 0.1.
        let fixed = 0.7 - 0.29f64.sqrt();
        assert!((z[99_999] - fixed).abs() < 1e-9, "{}", z[99_999]);
    }

    #[test]
    fn order10_matches_naive_sum() {
        let u = emu_input_series(400);
        let z = order10_filter(&u).unwrap();
        let at = |s: &[f64], k: isize| if k >= 0 { s[k as usize] } else { 0.0 };
        for j in 0..399isize {
            let sum: f64 = (1..=10).map(|i| at(&z, j - i)).sum();
            let next = 0.3 * at(&z, j - 1) + 0.05 * at(&z, j - 1) * sum + 1.5 * at(&u, j - 10) * at(&u, j - 1) + 0.1;
            assert!((z[j as usize + 1] - next).abs() < 1e-14);
        }
    }

    #[test]
    fn filter_divergence_is_reported() {
        let u = vec![30.0; 50];
        assert!(matches!(order2_filter(&u), Err(Error::SignalDivergence { .. })));
    }

    #[test]
    fn volterra_zero_input() {
        assert!(volterra_series(&[0.0; 50], &VolterraKernel::default()).iter().all(|z| *z == 0.0));
    }

    #[test]
    fn volterra_kernel_tail_is_small() {
        let k = VolterraKernel::default();
        let total: f64 = (0..5000).map(|t| k.g(t)).sum();
        let kept: f64 = (0..=k.window).map(|t| k.g(t)).sum();
        assert!((total - kept) / total < 1e-4);
        assert_eq!(k.g(100), 1.0);
    }

    #[test]
    fn quad_and_vdp_stay_at_origin() {
        let q = quad_lc(|_| 1.0, [0.0, 0.0], 1e-3, 1000).unwrap();
        let v = vdp_lc([0.0, 0.0], 1e-3, 1000).unwrap();
        assert_eq!(q.amplitude(), 0.0);
        assert_eq!(v.amplitude(), 0.0);
    }

    #[test]
    fn vdp_amplitude_is_two() {
        let v = vdp_lc([0.1, 0.0], 1e-3, 200_000).unwrap();
        let tail = &v.channels[0][150_000..];
        let peak = tail.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((peak - 2.0).abs() < 0.02, "{peak}");
    }

    #[test]
    fn quad_settles_to_a_bounded_orbit() {
        let q = quad_lc(|_| 1.0, [0.1, 0.0], 1e-3, 100_000).unwrap();
        assert!(q.amplitude() < 10.0);
        let tail = &q.channels[0][80_000..];
        let peak = tail.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let later = &q.channels[0][90_000..];
        let peak2 = later.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((peak - peak2).abs() < 1e-6);
    }

    #[test]
    fn lissajous_examples() {
        let s = lissajous(1.0, 2.0, FRAC_PI_2, 1e-3, 10).unwrap();
        assert!((s.channels[0][0] - 1.0).abs() < 1e-15 && s.channels[1][0].abs() < 1e-15);
        let dt = 2.0 * PI / 100_000.0;
        let full = lissajous(1.0, 2.0, FRAC_PI_2, dt, 100_001).unwrap();
        for c in &full.channels {
            assert!((c[0] - c[100_000]).abs() < 1e-9);
        }
        assert!(lissajous(1.0, 0.0, 0.0, 1e-3, 1).is_err());
    }

    #[test]
    fn gait_channels() {
        let g = harmonic_gait(4, 0.5, 1.0, 1e-3, 4000).unwrap();
        for (a, b) in g.channels[0].iter().zip(&g.channels[2]) {
            assert!((a + b).abs() < 1e-12);
        }
        let dot: f64 = g.channels[0].iter().zip(&g.channels[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() / 4000.0 < 1e-9);
        assert!(harmonic_gait(1, 0.5, 1.0, 1e-3, 10).is_err());
    }

    #[test]
    fn modulation_amplitude_falls_with_epsilon() {
        let sched = EpsilonSchedule { levels: vec![0.5, 2.0], dwell: 40.0 };
        let (eps, r) = modulated_quad(&sched, 1e-3, 80_000).unwrap();
        assert_eq!(eps[0], 0.5);
        let peak = |s: &[f64]| s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak(&r.channels[0][20_000..40_000]) > peak(&r.channels[0][60_000..80_000]));
    }

    #[test]
    fn signal_csv_round_trip() {
        let s = harmonic_gait(2, 0.5, 1.0, 1e-3, 20).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Signal::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.channels, s.channels);
        assert!(Signal::read_csv("t,ch1\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn settled_references_start_on_cycle() {
        let r = pattern_reference(PatternTask::VdpLc, 1e-3, 10).unwrap();
        assert!(r.channels[0][0].hypot(r.channels[1][0]) > 1.0);
        assert!("nope".parse::<PatternTask>().is_err());
    }
}
