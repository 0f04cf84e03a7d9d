//! Two-strip Miura crawler with fold-activated ground anchors.
//!
//! Each strip is a 9×3 sheet whose rows run along the body axis (+x after
//! construction). The strips sit side by side, joined by a stiff
//! triangulated bridge between their inner edges, and rest on the ground
//! plane with their even rows in contact.

mod ground;

pub use ground::GroundContact;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::dynamics::{SimConfig, SimState, Simulator, StepHook};
use crate::error::{Error, Result};
use crate::pattern::{angle_offset, build_miura, dihedral_angle, Hinge, HingeKind, FoldSign, Material, MiuraDesign, OrigamiMesh, Truss, Vec3};
use crate::reservoir::{
    mse_multi, train_readout, weight_bound, ActuatorGroup, Drive, Feedback, LoopOptions, ReadoutWeights, RoleAssignment,
    TrainSpec,
};
use crate::tasks::{harmonic_gait, Signal};

/// Closed-loop outputs beyond this multiple of the gait amplitude abort a crawl.
pub const FAILURE_FACTOR: f64 = 10.0;

/// Fold-activated anchor thresholds (rad).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorParams {
    /// Closing deviation from rest that engages an anchor.
    pub threshold: f64,
    /// An engaged anchor releases once the deviation drops below
    /// `threshold - hysteresis`.
    pub hysteresis: f64,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self { threshold: 0.05, hysteresis: 0.02 }
    }
}

/// Harmonic gait targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitParams {
    pub freq: f64,
    pub amplitude: f64,
    /// Feedback weight as a fraction of the largest admissible weight.
    pub weight_fraction: f64,
    /// Phase step between the two channels; `-π/2` reverses the wave.
    pub phase_step: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            freq: 0.5,
            amplitude: 1.0,
            weight_fraction: 0.5,
            phase_step: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl GaitParams {
    pub fn period(&self) -> f64 {
        1.0 / self.freq
    }

    /// Reference gait over `n` samples spaced `dt`.
    pub fn reference(&self, dt: f64, n: usize) -> Result<Signal> {
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::config("gait.freq", "must be positive"));
        }
        if (self.phase_step - std::f64::consts::FRAC_PI_2).abs() < 1e-15 {
            harmonic_gait(2, self.freq, self.amplitude, dt, n)
        } else {
            crate::tasks::harmonic_set(2, self.freq, self.amplitude, self.phase_step, dt, n)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrawlerParams {
    pub strip: MiuraDesign,
    pub material: Material,
    /// Bridge truss stiffness as a multiple of the sheet's `k_s`.
    pub bridge_factor: f64,
    pub ground: GroundContact,
    pub anchors: AnchorParams,
    pub gait: GaitParams,
    /// `None` actuates the middle along-body creases by quarter; a seed
    /// draws random mirror pairs of non-anchor creases instead.
    #[serde(default)]
    pub layout_seed: Option<u64>,
    /// Mirror pairs per channel for random layouts.
    #[serde(default = "default_pairs")]
    pub pairs_per_channel: usize,
}

fn default_pairs() -> usize {
    2
}

impl Default for CrawlerParams {
    fn default() -> Self {
        Self {
            strip: MiuraDesign::default().with_size(9, 3),
            material: Material::default(),
            bridge_factor: 100.0,
            ground: GroundContact::default(),
            anchors: AnchorParams::default(),
            gait: GaitParams::default(),
            layout_seed: None,
            pairs_per_channel: default_pairs(),
        }
    }
}

impl CrawlerParams {
    pub fn validate(&self) -> Result<()> {
        self.strip.validate()?;
        self.material.validate()?;
        if self.strip.n_rows < 9 || self.strip.n_rows % 2 == 0 || self.strip.n_cols != 3 {
            return Err(Error::config("crawler.strip", "strips need 3 columns and an odd row count of at least 9"));
        }
        if !(self.bridge_factor >= 100.0 && self.bridge_factor.is_finite()) {
            return Err(Error::config("crawler.bridge_factor", "must be at least 100"));
        }
        let a = &self.anchors;
        if !(a.threshold > 0.0 && a.hysteresis >= 0.0 && a.hysteresis < a.threshold) {
            return Err(Error::config("crawler.anchors", "need 0 <= hysteresis < threshold"));
        }
        if !(self.gait.weight_fraction > 0.0 && self.gait.weight_fraction <= 1.0) {
            return Err(Error::config("crawler.gait.weight_fraction", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Gravity on, nothing pinned, damping free of net force.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig { gravity: [0.0, 0.0, -9.81], zero_net_damping: true, ..SimConfig::default() }
    }
}

/// Layout of a built crawler; indices refer to the composite mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrawlerDesign {
    pub strip_nodes: usize,
    /// Indices of the bridge trusses.
    pub bridge_trusses: Vec<usize>,
    /// Gait roles: two channels, each spanning both strips with opposite
    /// signs on its front and back quarter.
    pub roles: RoleAssignment,
    /// Bottom crease hinges carrying an anchor.
    pub anchors: Vec<usize>,
    pub params: CrawlerParams,
}

impl CrawlerDesign {
    /// Nodes held by each anchor.
    pub fn anchor_nodes(&self, mesh: &OrigamiMesh) -> Vec<[usize; 2]> {
        self.anchors.iter().map(|&h| [mesh.hinges[h].p, mesh.hinges[h].q]).collect()
    }
}

/// Builds the composite crawler mesh and its roles.
pub fn build_crawler(params: &CrawlerParams) -> Result<(OrigamiMesh, CrawlerDesign)> {
    params.validate()?;
    let strip = build_miura(&params.strip, &params.material)?;
    let (rows, cols) = (params.strip.n_rows, params.strip.n_cols);
    let n = strip.node_count();
    let col_step = strip.positions[1].x - strip.positions[0].x;
    let shift = Vec3::new((cols - 1) as f64 * col_step + col_step, 0.0, 0.0);

    let mut positions = strip.positions.clone();
    positions.extend(strip.positions.iter().map(|p| p + shift));
    let mut trusses = strip.trusses.clone();
    trusses.extend(strip.trusses.iter().map(|t| Truss { i: t.i + n, j: t.j + n, ..*t }));
    let mut hinges = strip.hinges.clone();
    hinges.extend(strip.hinges.iter().map(|h| Hinge { p: h.p + n, q: h.q + n, r: h.r + n, v: h.v + n, ..*h }));

    // Bridge: rungs between inner-edge nodes of equal row, alternating
    // diagonals between rows, and stiff folds along every interior edge.
    let left = |i: usize| i * cols + cols - 1;
    let right = |i: usize| n + i * cols;
    let ea = |l: f64| params.bridge_factor * params.material.k_s * l;
    let mut bridge_trusses = Vec::new();
    let mut push_truss = |trusses: &mut Vec<Truss>, i: usize, j: usize| {
        let l = (positions[i] - positions[j]).norm();
        bridge_trusses.push(trusses.len());
        trusses.push(Truss { i, j, rest_length: l, ea: ea(l) });
    };
    for i in 0..rows {
        push_truss(&mut trusses, left(i), right(i));
    }
    let mut diagonals = Vec::new();
    for i in 0..rows - 1 {
        let d = if i % 2 == 0 { (left(i), right(i + 1)) } else { (right(i), left(i + 1)) };
        push_truss(&mut trusses, d.0, d.1);
        diagonals.push((i, d));
    }
    let k_fold = params.material.k_facet;
    let add_fold = |hinges: &mut Vec<Hinge>, p: usize, q: usize, r: usize, v: usize| -> Result<()> {
        let mut h = Hinge { p, q, r, v, kind: HingeKind::Facet, stiffness: k_fold, rest_angle: 0.0, fold: FoldSign::Valley };
        h.rest_angle = dihedral_angle(&positions, &h, hinges.len())?;
        hinges.push(h);
        Ok(())
    };
    for &(i, (a, b)) in &diagonals {
        let (r, v) = if i % 2 == 0 { (left(i + 1), right(i)) } else { (left(i), right(i + 1)) };
        add_fold(&mut hinges, a, b, r, v)?;
    }
    for i in 1..rows - 1 {
        // The rung of row i is shared by the triangles of the bays above and below.
        let below = if (i - 1) % 2 == 0 { left(i - 1) } else { right(i - 1) };
        let above = if i % 2 == 0 { right(i + 1) } else { left(i + 1) };
        add_fold(&mut hinges, left(i), right(i), above, below)?;
    }

    // Body axis along +x, ground at the lowest nodes.
    let z0 = positions.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    for p in positions.iter_mut() {
        *p = Vec3::new(p.y, -p.x, p.z - z0);
    }
    let mesh = OrigamiMesh {
        masses: vec![params.material.nodal_mass; positions.len()],
        positions,
        trusses,
        hinges,
        material: params.material,
    };
    mesh.validate()?;

    let design = layout(&mesh, &strip, params, bridge_trusses)?;
    Ok((mesh, design))
}

fn layout(mesh: &OrigamiMesh, strip: &OrigamiMesh, params: &CrawlerParams, bridge_trusses: Vec<usize>) -> Result<CrawlerDesign> {
    let cols = params.strip.n_cols;
    let rows = params.strip.n_rows;
    let n = strip.node_count();
    let per_strip = strip.hinges.len();
    let mut anchors = Vec::new();
    for s in 0..2 {
        for (k, h) in strip.hinges.iter().enumerate() {
            if h.kind == HingeKind::Crease && h.q - h.p == 1 && (h.p / cols) % 2 == 0 {
                anchors.push(s * per_strip + k);
            }
        }
    }
    // (strip hinge, channel, sign); the sign multiplies the closing direction.
    let picks = match params.layout_seed {
        None => quarter_layout(strip, cols, rows),
        Some(seed) => mirror_layout(strip, cols, rows, params.pairs_per_channel, seed)?,
    };
    let mut groups = vec![ActuatorGroup { hinges: Vec::new(), weights: Vec::new() }; 2];
    for s in 0..2 {
        for &(k, channel, sign) in &picks {
            let id = s * per_strip + k;
            let h = &mesh.hinges[id];
            let w = sign * h.fold.closing_direction() * params.gait.weight_fraction * weight_bound(h.rest_angle);
            groups[channel].hinges.push(id);
            groups[channel].weights.push(w);
        }
    }
    let roles = RoleAssignment {
        input: ActuatorGroup { hinges: Vec::new(), weights: Vec::new() },
        feedback: groups,
        sensor_hinges: mesh.crease_ids(),
        seed: 0,
    };
    roles.validate(mesh)?;
    Ok(CrawlerDesign {
        strip_nodes: n,
        bridge_trusses,
        roles,
        anchors,
        params: params.clone(),
    })
}

/// Middle along-body creases: channel `c` drives quarter `3 - c` with +W
/// and quarter `1 - c` with -W, so the fold wave runs front to back.
fn quarter_layout(strip: &OrigamiMesh, cols: usize, rows: usize) -> Vec<(usize, usize, f64)> {
    let quarter = |i: usize| i * 4 / (rows - 1);
    strip
        .hinges
        .iter()
        .enumerate()
        .filter(|(_, h)| h.kind == HingeKind::Crease && h.q - h.p == cols && h.p % cols == cols / 2)
        .map(|(k, h)| match quarter(h.p / cols) {
            3 => (k, 0, 1.0),
            2 => (k, 1, 1.0),
            1 => (k, 0, -1.0),
            _ => (k, 1, -1.0),
        })
        .collect()
}

/// Random mirror pairs (front crease and its reflection across the middle
/// row) of non-anchor creases, alternating between channels, with a random
/// weight on the front member and its negation on the back member.
fn mirror_layout(strip: &OrigamiMesh, cols: usize, rows: usize, per_channel: usize, seed: u64) -> Result<Vec<(usize, usize, f64)>> {
    let mirror = |n: usize| (rows - 1 - n / cols) * cols + n % cols;
    let creases: Vec<(usize, (usize, usize))> = strip
        .hinges
        .iter()
        .enumerate()
        .filter(|(_, h)| h.kind == HingeKind::Crease && !(h.q - h.p == 1 && (h.p / cols) % 2 == 0))
        .map(|(k, h)| (k, (h.p.min(h.q), h.p.max(h.q))))
        .collect();
    let mut pairs = Vec::new();
    for &(k, (p, q)) in &creases {
        let image = (mirror(p).min(mirror(q)), mirror(p).max(mirror(q)));
        if let Some(&(m, _)) = creases.iter().find(|(_, e)| *e == image) {
            // Keep each pair once, front member (higher row) first.
            if p / cols + q / cols > image.0 / cols + image.1 / cols {
                pairs.push((k, m));
            }
        }
    }
    if pairs.len() < 2 * per_channel || per_channel == 0 {
        return Err(Error::config("crawler.pairs_per_channel", format!("need 1..={} pairs per channel", pairs.len() / 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    Ok(pairs
        .iter()
        .take(2 * per_channel)
        .enumerate()
        .map(|(n, &(front, back))| (n, front, back, rng.random_range(-1.0..=1.0)))
        .collect::<Vec<_>>()
        .into_iter()
        .flat_map(|(n, front, back, w)| [(front, n % 2, w), (back, n % 2, -w)])
        .collect())
}

/// Engagement of every anchor crease.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorState {
    pub engaged: Vec<bool>,
    pub params: AnchorParams,
}

impl AnchorState {
    pub fn released(count: usize, params: AnchorParams) -> Self {
        Self { engaged: vec![false; count], params }
    }

    /// Updates engagement from the current fold of each anchor crease.
    /// Returns whether any anchor changed.
    pub fn update(&mut self, mesh: &OrigamiMesh, anchors: &[usize], positions: &[Vec3]) -> Result<bool> {
        let AnchorParams { threshold, hysteresis } = self.params;
        let mut changed = false;
        for (engaged, &h) in self.engaged.iter_mut().zip(anchors) {
            let hinge = &mesh.hinges[h];
            let closing = hinge.fold.closing_direction() * angle_offset(dihedral_angle(positions, hinge, h)?, hinge.rest_angle);
            let next = if *engaged { closing >= threshold - hysteresis } else { closing > threshold };
            changed |= next != *engaged;
            *engaged = next;
        }
        Ok(changed)
    }

    /// Bit `k` set when anchor `k` is engaged.
    pub fn bitmask(&self) -> u64 {
        self.engaged
            .iter()
            .enumerate()
            .filter(|(_, e)| **e)
            .fold(0, |m, (k, _)| m | 1 << k)
    }
}

/// One row of the crawl log per recorded sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlLog {
    pub times: Vec<f64>,
    pub centroid: Vec<[f64; 3]>,
    /// Per channel, one value per sample.
    pub channels: Vec<Vec<f64>>,
    pub anchors: Vec<u64>,
}

impl CrawlLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Centroid x travelled since the first sample.
    pub fn net_displacement(&self) -> f64 {
        match (self.centroid.first(), self.centroid.last()) {
            (Some(a), Some(b)) => b[0] - a[0],
            _ => 0.0,
        }
    }

    /// Centroid x travelled during each complete cycle of length `period`.
    pub fn cycle_displacements(&self, period: f64) -> Vec<f64> {
        let Some(&t0) = self.times.first() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut start = 0;
        let mut k = 1;
        loop {
            let edge = t0 + k as f64 * period;
            let end = self.times.partition_point(|&t| t < edge - 1e-9);
            if end >= self.times.len() {
                break;
            }
            out.push(self.centroid[end][0] - self.centroid[start][0]);
            start = end;
            k += 1;
        }
        out
    }

    /// Columns `t,centroid_x,centroid_y,centroid_z,ch0..chk,anchors_engaged_bitmask`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "centroid_x".into(), "centroid_y".into(), "centroid_z".into()];
        header.extend((0..self.channels.len()).map(|c| format!("ch{c}")));
        header.push("anchors_engaged_bitmask".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let c = self.centroid[k];
            let mut row = vec![self.times[k].to_string(), c[0].to_string(), c[1].to_string(), c[2].to_string()];
            row.extend(self.channels.iter().map(|ch| ch.get(k).map_or(String::new(), f64::to_string)));
            row.push(self.anchors[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn centroid(mesh: &OrigamiMesh, x: &[Vec3]) -> [f64; 3] {
    let m = mesh.total_mass();
    let c = x.iter().zip(&mesh.masses).fold(Vec3::zeros(), |acc, (p, w)| acc + p * *w) / m;
    [c.x, c.y, c.z]
}

/// Updates anchors before each step and logs the body at recorded samples.
struct AnchorHook<'a> {
    mesh: &'a OrigamiMesh,
    anchors: &'a [usize],
    nodes: Vec<[usize; 2]>,
    state: AnchorState,
    enabled: bool,
    stride: usize,
    log: CrawlLog,
}

impl StepHook for AnchorHook<'_> {
    fn before_step(&mut self, step: usize, state: &SimState, planar_lock: &mut [bool]) -> Result<()> {
        if self.enabled && self.state.update(self.mesh, self.anchors, &state.positions)? {
            planar_lock.iter_mut().for_each(|l| *l = false);
            for (nodes, engaged) in self.nodes.iter().zip(&self.state.engaged) {
                if *engaged {
                    for &n in nodes {
                        planar_lock[n] = true;
                    }
                }
            }
        }
        if step % self.stride == 0 {
            self.log.times.push(state.t);
            self.log.centroid.push(centroid(self.mesh, &state.positions));
            self.log.anchors.push(self.state.bitmask());
        }
        Ok(())
    }
}

/// State carried from one crawler run into the next.
#[derive(Clone, Debug, PartialEq)]
pub struct CrawlerState {
    pub sim: SimState,
    pub anchors: AnchorState,
}

impl CrawlerState {
    pub fn at_rest(mesh: &OrigamiMesh, design: &CrawlerDesign) -> Self {
        Self {
            sim: SimState::at_rest(mesh),
            anchors: AnchorState::released(design.anchors.len(), design.params.anchors),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrawlRun {
    pub log: CrawlLog,
    pub final_state: CrawlerState,
}

fn drive_crawler(
    mesh: &OrigamiMesh,
    design: &CrawlerDesign,
    feedback: Feedback<'_>,
    initial: &CrawlerState,
    config: &SimConfig,
    anchors: bool,
    duration: f64,
) -> Result<(crate::reservoir::ReservoirTrace, CrawlRun)> {
    let roles = &design.roles;
    let amplitude = design.params.gait.amplitude.abs();
    let options = LoopOptions {
        output_bound: if amplitude > 0.0 { FAILURE_FACTOR * amplitude } else { LoopOptions::default().output_bound },
        outage: None,
    };
    let mut drive = Drive::new(mesh, roles, None, feedback, options, config.sample_dt())?;
    let mut sim = Simulator::new(mesh, config, &roles.actuated())?;
    sim.set_ground(Some(design.params.ground));
    let nodes = design.anchor_nodes(mesh);
    let mut anchor_state = initial.anchors.clone();
    if !anchors {
        anchor_state.engaged.iter_mut().for_each(|e| *e = false);
    }
    for (n, engaged) in nodes.iter().zip(&anchor_state.engaged) {
        for &k in n {
            if *engaged {
                sim.set_planar_lock(k, true);
            }
        }
    }
    let mut hook = AnchorHook {
        mesh,
        anchors: &design.anchors,
        nodes,
        state: anchor_state,
        enabled: anchors,
        stride: config.record_stride,
        log: CrawlLog::default(),
    };
    let mut state = initial.sim.clone();
    let trace = sim.run_with(&mut state, &roles.sensor_hinges, &mut drive, &mut hook, duration)?;
    let mut log = hook.log;
    log.channels = match feedback {
        Feedback::Teacher(z) => z.iter().map(|c| c[..log.len().min(c.len())].to_vec()).collect(),
        Feedback::Readout(_) => drive.into_outputs(),
    };
    Ok((trace, CrawlRun { log, final_state: CrawlerState { sim: state, anchors: hook.state } }))
}

/// Lets the crawler settle on the ground under gravity with its creases at rest.
pub fn settle(mesh: &OrigamiMesh, design: &CrawlerDesign, duration: f64) -> Result<CrawlerState> {
    let config = design.params.sim_config();
    let zero = vec![vec![0.0; config.steps_for(duration) / config.record_stride + 1]; design.roles.feedback.len()];
    let (_, run) = drive_crawler(mesh, design, Feedback::Teacher(&zero), &CrawlerState::at_rest(mesh, design), &config, true, duration)?;
    Ok(run.final_state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaitTraining {
    pub weights: ReadoutWeights,
    pub train_mse: Vec<f64>,
    pub test_mse: Vec<f64>,
    /// Gait reference from the start of training, long enough to score
    /// the closed loop that follows.
    pub reference: Signal,
    pub log: CrawlLog,
    pub final_state: CrawlerState,
}

/// Teacher-forced gait training with anchors and contact active.
pub fn train_gait(
    mesh: &OrigamiMesh,
    design: &CrawlerDesign,
    initial: &CrawlerState,
    duration: f64,
    extra: f64,
    spec: &TrainSpec,
) -> Result<GaitTraining> {
    let config = design.params.sim_config();
    let samples = |d: f64| config.steps_for(d) / config.record_stride + 1;
    let reference = design.params.gait.reference(config.sample_dt(), samples(duration) + samples(extra))?;
    let (trace, run) = drive_crawler(mesh, design, Feedback::Teacher(&reference.channels), initial, &config, true, duration)?;
    let fit = train_readout(&trace, &reference.channels, spec)?;
    Ok(GaitTraining {
        weights: fit.weights,
        train_mse: fit.train_mse,
        test_mse: fit.test_mse,
        reference,
        log: run.log,
        final_state: run.final_state,
    })
}

/// Closed-loop crawl from `initial`; anchors may be disabled for a control run.
pub fn run_crawl(
    mesh: &OrigamiMesh,
    design: &CrawlerDesign,
    weights: &ReadoutWeights,
    initial: &CrawlerState,
    duration: f64,
    anchors: bool,
) -> Result<CrawlRun> {
    let config = design.params.sim_config();
    drive_crawler(mesh, design, Feedback::Readout(weights), initial, &config, anchors, duration).map(|(_, run)| run)
}

/// Closed-loop gait MSE over the first `window` samples of a crawl that
/// continues the training run.
pub fn gait_mse(training: &GaitTraining, crawl: &CrawlRun, window: usize) -> Result<f64> {
    let start = training.log.len();
    let target = training.reference.window(start, window)?;
    mse_multi(&target, &crawl.log.channels, window)
}
