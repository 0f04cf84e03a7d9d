//! Linear readout `z* = W₀ + Σ Wᵢ φᵢ` fitted by least squares.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ReservoirTrace;
use crate::error::{Error, Result};

/// Relative singular-value cutoff of the pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutChannel {
    pub bias: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWeights {
    pub sensor_hinges: Vec<usize>,
    pub channels: Vec<ReadoutChannel>,
}

impl ReadoutWeights {
    pub fn zeros(sensor_hinges: Vec<usize>, n_channels: usize) -> Self {
        let channels = (0..n_channels)
            .map(|_| ReadoutChannel {
                bias: 0.0,
                weights: vec![0.0; sensor_hinges.len()],
            })
            .collect();
        Self { sensor_hinges, channels }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Writes one output per channel into `out`.
    pub fn apply(&self, sensors: &[f64], out: &mut [f64]) {
        for (o, ch) in out.iter_mut().zip(&self.channels) {
            *o = ch.bias + ch.weights.iter().zip(sensors).map(|(w, s)| w * s).sum::<f64>();
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, ch) in self.channels.iter().enumerate() {
            if ch.weights.len() != self.sensor_hinges.len() {
                return Err(Error::LengthMismatch(format!(
                    "channel {k} has {} weights for {} sensors",
                    ch.weights.len(),
                    self.sensor_hinges.len()
                )));
            }
            if !ch.bias.is_finite() || ch.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Parse(format!("channel {k} has non-finite weights")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("weights json: {e}")))?;
        w.validate()?;
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Leading time discarded (s).
    pub washout: f64,
    pub train_window: f64,
    /// Window after training used for the open-loop test score (s).
    pub test_window: f64,
    /// Standard deviation of the Gaussian noise added to the states (rad).
    pub noise_amplitude: f64,
    /// Tikhonov weight; 0 selects the truncated pseudo-inverse.
    pub ridge: f64,
    pub seed: u64,
}

impl TrainSpec {
    /// 50 s washout, 45 s fit, 5 s test.
    pub fn emulation(seed: u64) -> Self {
        Self {
            washout: 50.0,
            train_window: 45.0,
            test_window: 5.0,
            noise_amplitude: 1e-3,
            ridge: 0.0,
            seed,
        }
    }

    /// 15 s washout, 51 s fit; the remaining 34 s of a 100 s run is scored
    /// as a held-out window.
    pub fn pattern(seed: u64) -> Self {
        Self {
            washout: 15.0,
            train_window: 51.0,
            test_window: 34.0,
            noise_amplitude: 1e-3,
            ridge: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train.washout", self.washout),
            ("train.train_window", self.train_window),
            ("train.test_window", self.test_window),
            ("train.noise_amplitude", self.noise_amplitude),
            ("train.ridge", self.ridge),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if self.train_window <= 0.0 {
            return Err(Error::config("train.train_window", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub weights: ReadoutWeights,
    /// Per-channel MSE over the fit window, on noise-free states.
    pub train_mse: Vec<f64>,
    /// Per-channel MSE over the test window; empty when it has no rows.
    pub test_mse: Vec<f64>,
}

/// Row range `[start, end)` of `trace` covering `[t0 + from, t0 + from + len)`.
fn window_rows(times: &[f64], from: f64, len: f64) -> (usize, usize) {
    let Some(&t0) = times.first() else {
        return (0, 0);
    };
    let eps = 1e-9;
    let start = times.partition_point(|&t| t - t0 < from - eps);
    let end = times.partition_point(|&t| t - t0 < from + len - eps);
    (start, end)
}

/// Fits `targets` (one series per channel, aligned with trace rows) with
/// `W = [1 Φ]⁺ Z` over the training window.
pub fn train_readout(trace: &ReservoirTrace, targets: &[Vec<f64>], spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    trace.validate()?;
    if targets.is_empty() {
        return Err(Error::Training("no target channels".into()));
    }
    for (k, z) in targets.iter().enumerate() {
        if z.len() < trace.len() {
            return Err(Error::LengthMismatch(format!(
                "target {k} has {} samples, trace has {}",
                z.len(),
                trace.len()
            )));
        }
        if z[..trace.len()].iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("target {k} holds non-finite values")));
        }
    }
    let (r0, r1) = window_rows(&trace.times, spec.washout, spec.train_window);
    let rows = r1 - r0;
    let p = trace.width() + 1;
    if rows < p {
        return Err(Error::Training(format!("{rows} training rows for {p} unknowns")));
    }

    let noise = Normal::new(0.0, spec.noise_amplitude).map_err(|e| Error::Training(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = DMatrix::<f64>::zeros(rows, p);
    for r in 0..rows {
        a[(r, 0)] = 1.0;
        for (c, &phi) in trace.row(r0 + r).iter().enumerate() {
            let jitter = if spec.noise_amplitude > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            a[(r, c + 1)] = phi + jitter;
        }
    }
    let mut z = DMatrix::<f64>::from_fn(rows, targets.len(), |r, k| targets[k][r0 + r]);
    let w = solve_least_squares(a, &mut z, spec.ridge)?;

    let channels: Vec<ReadoutChannel> = (0..targets.len())
        .map(|k| ReadoutChannel {
            bias: w[(0, k)],
            weights: (1..p).map(|c| w[(c, k)]).collect(),
        })
        .collect();
    let weights = ReadoutWeights {
        sensor_hinges: trace.hinge_ids.clone(),
        channels,
    };

    let score = |start: usize, end: usize| -> Vec<f64> {
        if end <= start {
            return Vec::new();
        }
        let mut acc = vec![0.0; targets.len()];
        let mut out = vec![0.0; targets.len()];
        for r in start..end {
            weights.apply(trace.row(r), &mut out);
            for k in 0..targets.len() {
                acc[k] += (targets[k][r] - out[k]).powi(2);
            }
        }
        acc.iter().map(|s| s / (end - start) as f64).collect()
    };
    let train_mse = score(r0, r1);
    let (t0, t1) = window_rows(&trace.times, spec.washout + spec.train_window, spec.test_window);
    let test_mse = score(t0, t1);
    Ok(TrainOutcome { weights, train_mse, test_mse })
}

/// Minimizes `‖A W − Z‖² + λ‖W‖²` through a thin QR of `A` and an SVD of
/// its triangular factor. With `λ = 0` singular values under
/// `PINV_RCOND·σ_max` are dropped.
pub fn solve_least_squares(a: DMatrix<f64>, z: &mut DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let p = a.ncols();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("state matrix holds non-finite values".into()));
    }
    let qr = a.qr();
    qr.q_tr_mul(z);
    let r = qr.r();
    let qtz = z.rows(0, p).into_owned();
    let svd = r.svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    if !(s_max > 0.0) {
        return Err(Error::Training("state matrix has rank zero".into()));
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v requested");
    let filter = DVector::from_iterator(
        s.len(),
        s.iter().map(|&si| {
            if ridge > 0.0 {
                si / (si * si + ridge)
            } else if si > PINV_RCOND * s_max {
                1.0 / si
            } else {
                0.0
            }
        }),
    );
    let mut coeffs = u.transpose() * qtz;
    for (mut row, f) in coeffs.row_iter_mut().zip(filter.iter()) {
        row *= *f;
    }
    Ok(v_t.transpose() * coeffs)
}

/// `(1/M) Σ (z − z*)²` over the first `window` samples.
pub fn mse(reference: &[f64], output: &[f64], window: usize) -> Result<f64> {
    if reference.len() < window || output.len() < window {
        return Err(Error::LengthMismatch(format!(
            "window {window} exceeds series of length {} / {}",
            reference.len(),
            output.len()
        )));
    }
    if window == 0 {
        return Err(Error::LengthMismatch("empty window".into()));
    }
    Ok(reference[..window]
        .iter()
        .zip(&output[..window])
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / window as f64)
}

/// Euclidean norm of per-channel MSEs.
pub fn mse_multi(reference: &[Vec<f64>], output: &[Vec<f64>], window: usize) -> Result<f64> {
    if reference.len() != output.len() {
        return Err(Error::LengthMismatch(format!(
            "{} reference channels, {} outputs",
            reference.len(),
            output.len()
        )));
    }
    let mut sq = 0.0;
    for (r, o) in reference.iter().zip(output) {
        sq += mse(r, o, window)?.powi(2);
    }
    Ok(sq.sqrt())
}

/// Smallest multi-channel MSE between `output[..window]` and the reference
/// shifted by `0..=max_shift` samples; returns the MSE and the shift.
///
/// Used where the output may lock onto the target cycle at an arbitrary
/// phase (autonomous starts and post-outage recovery).
pub fn aligned_mse(reference: &[Vec<f64>], output: &[Vec<f64>], window: usize, max_shift: usize) -> Result<(f64, usize)> {
    if reference.len() != output.len() {
        return Err(Error::LengthMismatch("channel counts differ".into()));
    }
    if reference.iter().any(|r| r.len() < window + max_shift) {
        return Err(Error::LengthMismatch(format!(
            "reference shorter than window {window} + shift {max_shift}"
        )));
    }
    let mut best = (f64::INFINITY, 0);
    for s in 0..=max_shift {
        let mut sq = 0.0;
        for (r, o) in reference.iter().zip(output) {
            sq += mse(&r[s..], o, window)?.powi(2);
        }
        let v = sq.sqrt();
        if v < best.0 {
            best = (v, s);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn trace_from(cols: &[Vec<f64>]) -> ReservoirTrace {
        let n = cols[0].len();
        let mut t = ReservoirTrace::new((0..cols.len()).collect());
        for r in 0..n {
            let row: Vec<f64> = cols.iter().map(|c| c[r]).collect();
            t.push(r as f64 * 1e-3, &row);
        }
        t
    }

    fn spec(noise: f64) -> TrainSpec {
        TrainSpec {
            washout: 0.0,
            train_window: 10.0,
            test_window: 0.0,
            noise_amplitude: noise,
            ridge: 0.0,
            seed: 1,
        }
    }

    fn random_cols(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn exact_recovery_of_a_sensor_column() {
        let cols = random_cols(500, 6, 2);
        let trace = trace_from(&cols);
        let out = train_readout(&trace, &[cols[3].clone()], &spec(0.0)).unwrap();
        let ch = &out.weights.channels[0];
        assert!(ch.bias.abs() < 1e-8);
        for (k, w) in ch.weights.iter().enumerate() {
            let expect = if k == 3 { 1.0 } else { 0.0 };
            assert!((w - expect).abs() < 1e-8, "{k}: {w}");
        }
        assert!(out.train_mse[0] < 1e-16);
    }

    #[test]
    fn bias_absorbs_constants() {
        let cols = random_cols(400, 4, 3);
        let trace = trace_from(&cols);
        let out = train_readout(&trace, &[vec![0.7; 400]], &spec(0.0)).unwrap();
        assert!((out.weights.channels[0].bias - 0.7).abs() < 1e-9);
    }

    #[test]
    fn synthetic_linear_oracle() {
        let cols = random_cols(1000, 20, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w_true: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z: Vec<f64> = (0..1000)
            .map(|r| (0..20).map(|c| w_true[c] * cols[c][r]).sum::<f64>() + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let out = train_readout(&trace_from(&cols), &[z], &spec(0.0)).unwrap();
        for (w, t) in out.weights.channels[0].weights.iter().zip(&w_true) {
            assert!((w - t).abs() < 0.05);
        }
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let cols = random_cols(600, 8, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = trace_from(&cols);
        let out = train_readout(&trace, &[z.clone()], &spec(0.0)).unwrap();
        let mut pred = [0.0];
        let resid: Vec<f64> = (0..600)
            .map(|r| {
                out.weights.apply(trace.row(r), &mut pred);
                pred[0] - z[r]
            })
            .collect();
        let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut g = vec![resid.iter().sum::<f64>()];
        g.extend(cols.iter().map(|c| c.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>()));
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(gnorm <= 1e-6 * znorm, "{gnorm}");
    }

    #[test]
    fn ridge_shrinks_weights() {
        let cols = random_cols(300, 5, 7);
        let trace = trace_from(&cols);
        let z = cols[0].iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let plain = train_readout(&trace, &[z.clone()], &spec(0.0)).unwrap();
        let ridged = train_readout(&trace, &[z], &TrainSpec { ridge: 100.0, ..spec(0.0) }).unwrap();
        assert!(ridged.weights.channels[0].weights[0].abs() < plain.weights.channels[0].weights[0].abs());
    }

    #[test]
    fn noise_is_seeded() {
        let cols = random_cols(300, 5, 8);
        let trace = trace_from(&cols);
        let a = train_readout(&trace, &[cols[1].clone()], &spec(1e-3)).unwrap();
        let b = train_readout(&trace, &[cols[1].clone()], &spec(1e-3)).unwrap();
        assert_eq!(a, b);
        let c = train_readout(&trace, &[cols[1].clone()], &TrainSpec { seed: 2, ..spec(1e-3) }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn training_errors() {
        let cols = random_cols(10, 3, 1);
        let trace = trace_from(&cols);
        assert!(train_readout(&trace, &[vec![0.0; 10]], &spec(0.0)).is_ok());
        assert!(train_readout(&trace, &[vec![0.0; 5]], &spec(0.0)).is_err());
        let zero = trace_from(&[vec![0.0; 10]]);
        let mut bad = zero.clone();
        bad.data[3] = f64::NAN;
        assert!(train_readout(&bad, &[vec![0.0; 10]], &spec(0.0)).is_err());
        assert!(train_readout(&trace_from(&[vec![0.0; 1]]), &[vec![0.0]], &spec(0.0)).is_err());
    }

    #[test]
    fn mse_examples() {
        let z = vec![0.3, -0.2, 1.0];
        assert_eq!(mse(&z, &z, 3).unwrap(), 0.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + 0.5).collect();
        assert!((mse(&z, &shifted, 3).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse(&z, &shifted, 4).is_err());
        let m = mse_multi(&[z.clone(), z.clone()], &[shifted.clone(), shifted], 3).unwrap();
        assert!((m - 0.25 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn aligned_mse_finds_the_shift() {
        let r: Vec<f64> = (0..400).map(|k| (k as f64 * 0.05).sin()).collect();
        let out = vec![r[37..].to_vec()];
        let (m, s) = aligned_mse(&[r], &out, 200, 100).unwrap();
        assert_eq!(s, 37);
        assert!(m < 1e-20);
    }

    #[test]
    fn weights_json() {
        let w = ReadoutWeights {
            sensor_hinges: vec![4, 9],
            channels: vec![ReadoutChannel { bias: 0.1, weights: vec![1.0, -2.0] }],
        };
        assert_eq!(ReadoutWeights::from_json(&w.to_json()).unwrap(), w);
        assert!(ReadoutWeights::from_json(r#"{"sensor_hinges":[1],"channels":[{"bias":0,"weights":[]}]}"#).is_err());
    }
}
