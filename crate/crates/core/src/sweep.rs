//! Design studies: random feedback-distribution search, material and
//! imperfection perturbations, geometry landscapes and role fractions.
//!
//! Every design is evaluated by the same pattern-generation protocol:
//! teacher forcing from rest, readout fit, then a closed loop continued from
//! the final training state and scored over its first window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dynamics::{SimConfig, SimState};
use crate::error::{Error, Result};
use crate::pattern::{build_miura, perturb_vertices, HingeKind, ImperfectionSpec, Material, MiuraDesign, OrigamiMesh};
use crate::reservoir::{
    assign_roles, closed_loop, mse_multi, teacher_force, train_readout, weight_bound, LoopOptions, ReadoutWeights,
    RoleAssignment, RoleFractions, TrainSpec,
};
use crate::tasks::{pattern_reference, PatternTask, Signal};

/// Seed of design `index` under `master` (splitmix64 finalizer).
pub fn design_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Training and scoring protocol shared by every study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub task: PatternTask,
    pub sim: SimConfig,
    /// Teacher-forcing duration (s).
    pub train_duration: f64,
    pub train: TrainSpec,
    /// Closed-loop scoring window (s).
    pub score_window: f64,
    /// Output bound as a multiple of the target amplitude.
    pub failure_factor: f64,
}

impl Protocol {
    pub fn pattern(task: PatternTask, n_cols: usize) -> Self {
        Self {
            task,
            sim: SimConfig::default().pin_corner_facet(n_cols),
            train_duration: 100.0,
            train: TrainSpec::pattern(0),
            score_window: 10.0,
            failure_factor: 10.0,
        }
    }

    fn samples(&self, seconds: f64) -> usize {
        self.sim.steps_for(seconds) / self.sim.record_stride
    }

    /// Reference covering training plus `extra` seconds of closed loop.
    pub fn reference(&self, extra: f64) -> Result<Signal> {
        let n = self.samples(self.train_duration) + self.samples(extra) + 1;
        let mut s = pattern_reference(self.task, self.sim.dt, n * self.sim.record_stride)?;
        if self.sim.record_stride > 1 {
            for c in &mut s.channels {
                *c = c.iter().step_by(self.sim.record_stride).copied().collect();
            }
            s.dt = self.sim.sample_dt();
        }
        Ok(s)
    }
}

/// Outcome of one trained and scored design.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub weights: ReadoutWeights,
    pub train_mse: Vec<f64>,
    /// Closed-loop MSE over the scoring window, or the failure reason.
    pub score: std::result::Result<f64, String>,
    pub train_state: SimState,
}

/// Trains `roles` on `mesh` and scores the continued closed loop.
pub fn evaluate(mesh: &OrigamiMesh, roles: &RoleAssignment, protocol: &Protocol, reference: &Signal, seed: u64) -> Result<Evaluation> {
    let spec = TrainSpec { seed, ..protocol.train };
    let (trace, state) = teacher_force(mesh, roles, &reference.channels, None, protocol.train_duration, &protocol.sim)?;
    let fit = train_readout(&trace, &reference.channels, &spec)?;
    let start = trace.len();
    let window = protocol.samples(protocol.score_window);
    let target = reference.window(start, window)?;
    let options = LoopOptions {
        output_bound: protocol.failure_factor * reference.amplitude(),
        outage: None,
    };
    let score = match closed_loop(mesh, roles, &fit.weights, None, protocol.score_window, &state, &protocol.sim, &options) {
        Ok(run) => Ok(mse_multi(&target, &run.outputs, window)?),
        Err(e @ (Error::OutputDivergence { .. } | Error::Divergence { .. })) => Err(e.to_string()),
        Err(e) => return Err(e),
    };
    Ok(Evaluation { weights: fit.weights, train_mse: fit.train_mse, score, train_state: state })
}

/// Training failures caused by the physics count as a failed design.
fn evaluate_or_fail(mesh: &OrigamiMesh, roles: &RoleAssignment, protocol: &Protocol, reference: &Signal, seed: u64) -> Result<std::result::Result<Evaluation, String>> {
    match evaluate(mesh, roles, protocol, reference, seed) {
        Ok(e) => Ok(Ok(e)),
        Err(e @ (Error::Divergence { .. } | Error::DegenerateHinge { .. } | Error::ZeroLengthTruss { .. } | Error::Training(_))) => {
            Ok(Err(e.to_string()))
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub index: usize,
    pub seed: u64,
    /// Short description of the design variant.
    pub descriptor: String,
    pub mse: Option<f64>,
    pub failure: Option<String>,
}

impl SweepRecord {
    pub fn failed(&self) -> bool {
        self.mse.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl Aggregate {
    /// Statistics over the successful records; NaN when none succeeded.
    pub fn of(records: &[SweepRecord]) -> Self {
        let mut ok: Vec<f64> = records.iter().filter_map(|r| r.mse).collect();
        ok.sort_by(f64::total_cmp);
        let n = ok.len();
        let (mean, std, min, max, median) = if n == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mean = ok.iter().sum::<f64>() / n as f64;
            let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let median = if n % 2 == 1 { ok[n / 2] } else { 0.5 * (ok[n / 2 - 1] + ok[n / 2]) };
            (mean, var.sqrt(), ok[0], ok[n - 1], median)
        };
        Self { count: records.len(), failures: records.len() - n, mean, std, min, max, median }
    }

    /// Standard deviation plus the extreme range.
    pub fn spread(&self) -> f64 {
        self.std + (self.max - self.min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub aggregate: Aggregate,
}

impl SweepResult {
    pub fn from_records(records: Vec<SweepRecord>) -> Self {
        let aggregate = Aggregate::of(&records);
        Self { records, aggregate }
    }

    /// One row per design: `index,seed,descriptor,mse,failed,reason`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "seed", "descriptor", "mse", "failed", "reason"])?;
        for r in &self.records {
            w.write_record([
                r.index.to_string(),
                r.seed.to_string(),
                r.descriptor.clone(),
                r.mse.map_or(String::new(), |m| format!("{m:e}")),
                u8::from(r.failed()).to_string(),
                r.failure.clone().unwrap_or_default(),
            ])
            ?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn aggregate_json(&self) -> String {
        serde_json::to_string_pretty(&self.aggregate).expect("aggregate serializes")
    }
}

/// Runs `job(i)` for `i in 0..n` on `jobs` workers; results keep index order.
pub fn run_indexed<T, F>(n: usize, jobs: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(&job).collect())
}

fn record(index: usize, seed: u64, descriptor: String, outcome: &std::result::Result<Evaluation, String>) -> SweepRecord {
    let (mse, failure) = match outcome {
        Ok(e) => match &e.score {
            Ok(m) => (Some(*m), None),
            Err(reason) => (None, Some(reason.clone())),
        },
        Err(reason) => (None, Some(reason.clone())),
    };
    SweepRecord { index, seed, descriptor, mse, failure }
}

/// Best design of a search.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseDesign {
    pub roles: RoleAssignment,
    pub weights: ReadoutWeights,
    pub mse: f64,
    pub train_state: SimState,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub result: SweepResult,
    pub best: BaseDesign,
}

/// Evaluates `n_designs` random feedback distributions and keeps the one
/// with the lowest closed-loop MSE.
pub fn feedback_search(
    mesh: &OrigamiMesh,
    fractions: &RoleFractions,
    n_designs: usize,
    protocol: &Protocol,
    master_seed: u64,
    jobs: usize,
) -> Result<SearchResult> {
    if n_designs == 0 {
        return Err(Error::config("sweep.n", "need at least one design"));
    }
    let reference = protocol.reference(protocol.score_window)?;
    let outcomes = run_indexed(n_designs, jobs, |i| {
        let seed = design_seed(master_seed, i as u64);
        let roles = assign_roles(mesh, fractions, seed)?;
        let outcome = evaluate_or_fail(mesh, &roles, protocol, &reference, seed)?;
        Ok((record(i, seed, format!("roles#{i}"), &outcome), roles, outcome))
    })?;
    let mut best: Option<BaseDesign> = None;
    let mut records = Vec::with_capacity(n_designs);
    for (rec, roles, outcome) in outcomes {
        if let (Some(mse), Ok(eval)) = (rec.mse, outcome) {
            if best.as_ref().is_none_or(|b| mse < b.mse) {
                best = Some(BaseDesign {
                    roles,
                    weights: eval.weights,
                    mse,
                    train_state: eval.train_state,
                    index: rec.index,
                });
            }
        }
        records.push(rec);
    }
    let best = best.ok_or(Error::AllDesignsFailed(n_designs))?;
    Ok(SearchResult { result: SweepResult::from_records(records), best })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Mass,
    Stiffness,
    Imperfection,
}

impl std::str::FromStr for Perturbation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(Self::Mass),
            "stiffness" => Ok(Self::Stiffness),
            "imperfection" => Ok(Self::Imperfection),
            other => Err(Error::config("sweep.kind", format!("unknown perturbation `{other}`"))),
        }
    }
}

/// Sampling ranges of the perturbation studies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbRanges {
    /// Nodal mass range (kg).
    pub mass: (f64, f64),
    /// Passive crease stiffness range (N/rad).
    pub stiffness: (f64, f64),
    /// Imperfection scale and correlation length as multiples of `a`.
    pub chi_factor: f64,
    pub corr_factor: f64,
}

impl Default for PerturbRanges {
    fn default() -> Self {
        Self { mass: (0.001, 0.050), stiffness: (0.005, 0.5), chi_factor: 0.4, corr_factor: 4.0 }
    }
}

/// Draws one perturbed copy of `mesh`.
pub fn perturb(mesh: &OrigamiMesh, kind: Perturbation, ranges: &PerturbRanges, crease_length: f64, seed: u64) -> Result<OrigamiMesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    match kind {
        Perturbation::Mass => {
            let mut m = mesh.clone();
            for mass in &mut m.masses {
                *mass = uniform(&mut rng, ranges.mass);
            }
            Ok(m)
        }
        Perturbation::Stiffness => {
            let mut m = mesh.clone();
            for h in m.hinges.iter_mut().filter(|h| h.kind == HingeKind::Crease) {
                h.stiffness = uniform(&mut rng, ranges.stiffness);
            }
            Ok(m)
        }
        Perturbation::Imperfection => perturb_vertices(
            mesh,
            &ImperfectionSpec {
                chi: ranges.chi_factor * crease_length,
                corr_length: ranges.corr_factor * crease_length,
                seed,
            },
        ),
    }
}

/// Roles carried to another mesh with the same topology; weights are
/// clamped to the new rest angles' bounds.
pub fn transfer_roles(roles: &RoleAssignment, mesh: &OrigamiMesh) -> Result<RoleAssignment> {
    let mut out = roles.clone();
    let clamp = |h: usize, w: f64| {
        let b = weight_bound(mesh.hinges[h].rest_angle);
        w.clamp(-b, b)
    };
    for g in std::iter::once(&mut out.input).chain(out.feedback.iter_mut()) {
        for (h, w) in g.hinges.iter().zip(g.weights.iter_mut()) {
            *w = clamp(*h, *w);
        }
    }
    out.validate(mesh)?;
    Ok(out)
}

/// Re-trains `base` on `n_samples` perturbed meshes.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_sweep(
    mesh: &OrigamiMesh,
    base: &RoleAssignment,
    kind: Perturbation,
    ranges: &PerturbRanges,
    crease_length: f64,
    n_samples: usize,
    protocol: &Protocol,
    master_seed: u64,
    jobs: usize,
) -> Result<SweepResult> {
    let reference = protocol.reference(protocol.score_window)?;
    let records = run_indexed(n_samples, jobs, |i| {
        let seed = design_seed(master_seed, i as u64);
        let descriptor = format!("{kind:?}#{i}").to_lowercase();
        let m = match perturb(mesh, kind, ranges, crease_length, seed) {
            Ok(m) => m,
            Err(e @ Error::CovarianceFactorization) => {
                return Ok(SweepRecord { index: i, seed, descriptor, mse: None, failure: Some(e.to_string()) })
            }
            Err(e) => return Err(e),
        };
        let roles = transfer_roles(base, &m)?;
        let outcome = evaluate_or_fail(&m, &roles, protocol, &reference, seed)?;
        Ok(record(i, seed, descriptor, &outcome))
    })?;
    Ok(SweepResult::from_records(records))
}

/// MSE grid for one folding angle; `cells[g][r]` holds the cell at
/// `gammas[g]`, `ratios[r]`, `None` where the design failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub theta: f64,
    pub ratios: Vec<f64>,
    pub gammas: Vec<f64>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Landscape {
    pub fn failures(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn median(&self) -> f64 {
        let mut ok: Vec<f64> = self.cells.iter().flatten().filter_map(|c| *c).collect();
        if ok.is_empty() {
            return f64::NAN;
        }
        ok.sort_by(f64::total_cmp);
        let n = ok.len();
        if n % 2 == 1 { ok[n / 2] } else { 0.5 * (ok[n / 2 - 1] + ok[n / 2]) }
    }

    /// Matrix CSV: header `gamma_deg,<ratio>...`, failed cells left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["gamma_deg".to_string()];
        header.extend(self.ratios.iter().map(|r| format!("{r}")));
        w.write_record(&header)?;
        for (g, row) in self.gammas.iter().zip(&self.cells) {
            let mut rec = vec![format!("{}", g.to_degrees())];
            rec.extend(row.iter().map(|c| c.map_or(String::new(), |m| format!("{m:e}"))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every `(a/b, γ)` cell at each θ with `base` roles transferred by
/// crease index; `a` stays fixed and `b = a / ratio`.
#[allow(clippy::too_many_arguments)]
pub fn geometry_landscape(
    design: &MiuraDesign,
    material: &Material,
    base: &RoleAssignment,
    ratios: &[f64],
    gammas: &[f64],
    thetas: &[f64],
    protocol: &Protocol,
    seed: u64,
    jobs: usize,
) -> Result<Vec<Landscape>> {
    if ratios.is_empty() || gammas.is_empty() || thetas.is_empty() {
        return Err(Error::config("sweep.grid", "grid must be nonempty"));
    }
    let reference = protocol.reference(protocol.score_window)?;
    let cells: Vec<(usize, usize, usize)> = (0..thetas.len())
        .flat_map(|t| (0..gammas.len()).flat_map(move |g| (0..ratios.len()).map(move |r| (t, g, r))))
        .collect();
    let scores = run_indexed(cells.len(), jobs, |i| {
        let (t, g, r) = cells[i];
        let d = MiuraDesign { b: design.a / ratios[r], gamma: gammas[g], theta: thetas[t], ..*design };
        let mesh = build_miura(&d, material)?;
        let roles = transfer_roles(base, &mesh)?;
        let outcome = evaluate_or_fail(&mesh, &roles, protocol, &reference, seed)?;
        Ok(record(i, seed, String::new(), &outcome).mse)
    })?;
    Ok(thetas
        .iter()
        .enumerate()
        .map(|(t, &theta)| Landscape {
            theta,
            ratios: ratios.to_vec(),
            gammas: gammas.to_vec(),
            cells: (0..gammas.len())
                .map(|g| (0..ratios.len()).map(|r| scores[(t * gammas.len() + g) * ratios.len() + r]).collect())
                .collect(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensing {
    /// Every crease is a sensor.
    All,
    /// Only the feedback creases are sensors.
    Actuated,
}

/// Random designs at each feedback fraction (split over two groups).
#[allow(clippy::too_many_arguments)]
pub fn fraction_study(
    mesh: &OrigamiMesh,
    fractions: &[f64],
    n_designs: usize,
    sensing: Sensing,
    protocol: &Protocol,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<(f64, SweepResult)>> {
    let reference = protocol.reference(protocol.score_window)?;
    let total = fractions.len() * n_designs;
    let records = run_indexed(total, jobs, |i| {
        let (f, k) = (fractions[i / n_designs], i % n_designs);
        let seed = design_seed(master_seed, i as u64);
        let roles = assign_roles(mesh, &RoleFractions { input: 0.0, feedback: f, groups: 2, sensor: 1.0 }, seed)?;
        let roles = match sensing {
            Sensing::All => roles,
            Sensing::Actuated => {
                let mut s = roles.feedback_hinges();
                s.sort_unstable();
                roles.with_sensors(s)
            }
        };
        let outcome = evaluate_or_fail(mesh, &roles, protocol, &reference, seed)?;
        Ok(record(k, seed, format!("fraction={f}"), &outcome))
    })?;
    Ok(fractions
        .iter()
        .enumerate()
        .map(|(j, &f)| (f, SweepResult::from_records(records[j * n_designs..(j + 1) * n_designs].to_vec())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(mse: Option<f64>) -> SweepRecord {
        SweepRecord { index: 0, seed: 0, descriptor: String::new(), mse, failure: None }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| design_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(design_seed(7, 3), a[3]);
        assert_ne!(design_seed(8, 3), a[3]);
    }

    #[test]
    fn aggregate_recomputes() {
        let records = vec![rec(Some(1.0)), rec(None), rec(Some(3.0)), rec(Some(2.0))];
        let a = Aggregate::of(&records);
        assert_eq!((a.count, a.failures), (4, 1));
        assert!((a.mean - 2.0).abs() < 1e-12);
        assert!((a.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((a.min, a.max, a.median), (1.0, 3.0, 2.0));
    }

    #[test]
    fn parallel_matches_serial() {
        let f = |i: usize| Ok(design_seed(1, i as u64) as f64 / 3.0);
        assert_eq!(run_indexed(37, 1, f).unwrap(), run_indexed(37, 4, f).unwrap());
    }

    #[test]
    fn zero_width_ranges_leave_mesh_unchanged() {
        let mesh = build_miura(&MiuraDesign::default().with_size(4, 4), &Material::default()).unwrap();
        let ranges = PerturbRanges { mass: (0.007, 0.007), stiffness: (0.2525, 0.2525), chi_factor: 0.0, corr_factor: 4.0 };
        for kind in [Perturbation::Mass, Perturbation::Stiffness, Perturbation::Imperfection] {
            assert_eq!(perturb(&mesh, kind, &ranges, 0.016, 9).unwrap(), mesh);
        }
    }

    #[test]
    fn perturbations_stay_in_range() {
        let mesh = build_miura(&MiuraDesign::default().with_size(4, 4), &Material::default()).unwrap();
        let r = PerturbRanges::default();
        let m = perturb(&mesh, Perturbation::Mass, &r, 0.016, 1).unwrap();
        assert!(m.masses.iter().all(|x| (0.001..=0.05).contains(x)));
        let s = perturb(&mesh, Perturbation::Stiffness, &r, 0.016, 1).unwrap();
        for h in &s.hinges {
            match h.kind {
                HingeKind::Crease => assert!((0.005..=0.5).contains(&h.stiffness)),
                HingeKind::Facet => assert_eq!(h.stiffness, 10.0),
            }
        }
    }

    #[test]
    fn transfer_clamps_weights() {
        let mesh = build_miura(&MiuraDesign::default().with_size(5, 5), &Material::default()).unwrap();
        let roles = assign_roles(&mesh, &RoleFractions::pattern(), 1).unwrap();
        let flat = build_miura(&MiuraDesign { theta: 0.2, ..MiuraDesign::default().with_size(5, 5) }, &Material::default()).unwrap();
        let moved = transfer_roles(&roles, &flat).unwrap();
        for g in &moved.feedback {
            for (&h, &w) in g.hinges.iter().zip(&g.weights) {
                assert!(w.abs() <= weight_bound(flat.hinges[h].rest_angle) + 1e-15);
            }
        }
    }

    #[test]
    fn landscape_csv_marks_failures() {
        let l = Landscape { theta: 1.0, ratios: vec![1.0, 2.0], gammas: vec![0.5], cells: vec![vec![Some(1e-3), None]] };
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",1e-3,"), "{text}");
        assert_eq!(l.failures(), 1);
    }
}
