//! Run configuration (TOML) and run manifests (JSON).
//!
//! Every section is optional and falls back to the baseline values. Angles
//! are given in degrees. Unknown keys are rejected so typos surface as
//! errors naming the offending field.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::dynamics::SimConfig;
use crate::error::{Error, Result};
use crate::locomotion::{AnchorParams, CrawlerParams, GaitParams, GroundContact};
use crate::pattern::{Material, MiuraDesign};
use crate::reservoir::{RecoveryWindow, RoleAssignment, RoleFractions, TrainSpec};
use crate::sweep::{Perturbation, PerturbRanges, Protocol, Sensing};
use crate::tasks::{EpsilonSchedule, PatternTask};

/// Miura-ori geometry with angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub a: f64,
    pub b: f64,
    pub gamma_deg: f64,
    pub theta_deg: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self::from(&MiuraDesign::default())
    }
}

impl From<&MiuraDesign> for DesignConfig {
    fn from(d: &MiuraDesign) -> Self {
        Self {
            a: d.a,
            b: d.b,
            gamma_deg: d.gamma.to_degrees(),
            theta_deg: d.theta.to_degrees(),
            rows: d.n_rows,
            cols: d.n_cols,
        }
    }
}

impl DesignConfig {
    pub fn to_design(&self) -> MiuraDesign {
        MiuraDesign {
            a: self.a,
            b: self.b,
            gamma: self.gamma_deg.to_radians(),
            theta: self.theta_deg.to_radians(),
            n_rows: self.rows,
            n_cols: self.cols,
        }
    }

    /// Validates under `section`, mapping field names to config paths.
    fn validate(&self, section: &str) -> Result<MiuraDesign> {
        let d = self.to_design();
        d.validate().map_err(|e| match e {
            Error::InvalidDesign(msg) => {
                let (field, why) = msg.split_once(": ").unwrap_or(("", msg.as_str()));
                let field = match field {
                    "gamma" | "theta" => format!("{field}_deg"),
                    "n_rows" => "rows".into(),
                    "n_cols" => "cols".into(),
                    other => other.into(),
                };
                Error::config(format!("{section}.{field}"), why)
            }
            other => other,
        })?;
        Ok(d)
    }
}

fn material_error(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidDesign(msg) => {
            let (field, why) = msg.split_once(": ").unwrap_or(("", msg.as_str()));
            Error::config(format!("{section}.{field}"), why)
        }
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pinning {
    /// The three nodes of the corner facet at the origin.
    CornerFacet,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub damping_ratio: f64,
    pub gravity: [f64; 3],
    pub record_stride: usize,
    pub pin: Pinning,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self { dt: s.dt, damping_ratio: s.damping_ratio, gravity: s.gravity, record_stride: s.record_stride, pin: Pinning::CornerFacet }
    }
}

impl SimSection {
    pub fn to_config(&self, n_cols: usize) -> Result<SimConfig> {
        let c = SimConfig {
            dt: self.dt,
            damping_ratio: self.damping_ratio,
            gravity: self.gravity,
            record_stride: self.record_stride,
            ..SimConfig::default()
        };
        let c = match self.pin {
            Pinning::CornerFacet => c.pin_corner_facet(n_cols),
            Pinning::None => c,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Role selection. An inline `assignment` wins over `file`, which wins over
/// a random draw with the given fractions (command defaults when absent).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolesSection {
    pub input: Option<f64>,
    pub feedback: Option<f64>,
    pub groups: Option<usize>,
    pub sensor: Option<f64>,
    /// Seed of the random draw; the run seed when absent.
    pub seed: Option<u64>,
    pub file: Option<PathBuf>,
    pub assignment: Option<RoleAssignment>,
}

impl RolesSection {
    pub fn fractions(&self, defaults: RoleFractions) -> RoleFractions {
        RoleFractions {
            input: self.input.unwrap_or(defaults.input),
            feedback: self.feedback.unwrap_or(defaults.feedback),
            groups: self.groups.unwrap_or(defaults.groups),
            sensor: self.sensor.unwrap_or(defaults.sensor),
        }
    }
}

/// Overrides of the command's training split (seconds).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub washout: Option<f64>,
    pub train_window: Option<f64>,
    pub test_window: Option<f64>,
    pub noise_amplitude: Option<f64>,
    pub ridge: Option<f64>,
}

impl TrainSection {
    pub fn apply(&self, base: TrainSpec) -> Result<TrainSpec> {
        let s = TrainSpec {
            washout: self.washout.unwrap_or(base.washout),
            train_window: self.train_window.unwrap_or(base.train_window),
            test_window: self.test_window.unwrap_or(base.test_window),
            noise_amplitude: self.noise_amplitude.unwrap_or(base.noise_amplitude),
            ridge: self.ridge.unwrap_or(base.ridge),
            seed: base.seed,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub duration: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { duration: 100.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmulateSection {
    pub duration: f64,
    pub sensing: Sensing,
}

impl Default for EmulateSection {
    fn default() -> Self {
        Self { duration: 100.0, sensing: Sensing::All }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageSection {
    /// Seconds into the closed loop.
    pub start: f64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSection {
    pub task: PatternTask,
    pub train_duration: f64,
    /// Closed-loop duration (s).
    pub duration: f64,
    pub score_window: f64,
    pub failure_factor: f64,
    /// Random designs searched for the roles; 0 uses the roles section.
    pub search: usize,
    pub outage: Option<OutageSection>,
    /// Length of an extra closed loop started from rest (s).
    pub rest_run: Option<f64>,
    pub recovery: RecoveryWindow,
}

impl Default for PatternSection {
    fn default() -> Self {
        let p = Protocol::pattern(PatternTask::QuadLc, 9);
        Self {
            task: p.task,
            train_duration: p.train_duration,
            duration: 10.0,
            score_window: p.score_window,
            failure_factor: p.failure_factor,
            search: 0,
            outage: None,
            rest_run: None,
            recovery: RecoveryWindow::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModulateSection {
    pub levels: Vec<f64>,
    /// Hold time of each level (s).
    pub dwell: f64,
    pub train_duration: f64,
    pub duration: f64,
    pub input_fraction: f64,
    /// Designs searched on the plain quadratic cycle for the feedback
    /// groups; 0 uses the roles section.
    pub search: usize,
}

impl Default for ModulateSection {
    fn default() -> Self {
        Self {
            levels: vec![1.0, 0.5, 1.5, 2.0, 0.75, 1.25],
            dwell: 25.0,
            train_duration: 500.0,
            duration: 150.0,
            input_fraction: 0.15,
            search: 0,
        }
    }
}

impl ModulateSection {
    pub fn schedule(&self) -> Result<EpsilonSchedule> {
        let s = EpsilonSchedule { levels: self.levels.clone(), dwell: self.dwell };
        s.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(path.replace("task.epsilon", "modulate"), message),
            other => other,
        })?;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Feedback,
    Mass,
    Stiffness,
    Imperfection,
    Geometry,
    Fraction,
}

impl SweepKind {
    pub fn perturbation(self) -> Option<Perturbation> {
        match self {
            Self::Mass => Some(Perturbation::Mass),
            Self::Stiffness => Some(Perturbation::Stiffness),
            Self::Imperfection => Some(Perturbation::Imperfection),
            _ => None,
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feedback" => Ok(Self::Feedback),
            "mass" => Ok(Self::Mass),
            "stiffness" => Ok(Self::Stiffness),
            "imperfection" => Ok(Self::Imperfection),
            "geometry" => Ok(Self::Geometry),
            "fraction" => Ok(Self::Fraction),
            other => Err(Error::config("sweep.kind", format!("unknown sweep kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub kind: SweepKind,
    /// Designs or samples per study (per fraction for `fraction`).
    pub n: usize,
    /// Designs searched for the base design of perturbation and geometry
    /// studies; 0 uses the roles section.
    pub base_search: usize,
    pub fractions: Vec<f64>,
    pub sensing: Sensing,
    pub thetas_deg: Vec<f64>,
    pub ratios: Vec<f64>,
    pub gammas_deg: Vec<f64>,
    /// Mass range (kg).
    pub mass: (f64, f64),
    /// Passive crease stiffness range (N/rad).
    pub stiffness: (f64, f64),
    pub chi_factor: f64,
    pub corr_factor: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let r = PerturbRanges::default();
        Self {
            kind: SweepKind::Feedback,
            n: 72,
            base_search: 72,
            fractions: vec![0.2, 0.3, 0.4, 0.5],
            sensing: Sensing::All,
            thetas_deg: vec![50.0, 60.0, 70.0],
            ratios: (0..10).map(|i| 1.0 + 0.25 * i as f64).collect(),
            gammas_deg: (0..10).map(|i| 30.0 + 5.0 * i as f64).collect(),
            mass: r.mass,
            stiffness: r.stiffness,
            chi_factor: r.chi_factor,
            corr_factor: r.corr_factor,
        }
    }
}

impl SweepSection {
    pub fn ranges(&self) -> PerturbRanges {
        PerturbRanges { mass: self.mass, stiffness: self.stiffness, chi_factor: self.chi_factor, corr_factor: self.corr_factor }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("sweep.n", "need at least one design"));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::config("sweep.fractions", "fractions must lie in (0, 1)"));
        }
        if self.ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::config("sweep.ratios", "ratios must be positive"));
        }
        for (name, (lo, hi)) in [("sweep.mass", self.mass), ("sweep.stiffness", self.stiffness)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config(name, "need 0 < lo <= hi"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrawlSection {
    pub strip: DesignConfig,
    pub material: Material,
    pub bridge_factor: f64,
    pub ground: GroundContact,
    pub anchors: AnchorParams,
    pub gait: GaitParams,
    pub layout_seed: Option<u64>,
    pub pairs_per_channel: usize,
    /// Rest time before training (s).
    pub settle: f64,
    pub train_duration: f64,
    /// Closed-loop crawl duration (s); 0 trains only.
    pub duration: f64,
    /// Fold-activated anchors on during the crawl.
    pub anchors_enabled: bool,
}

impl Default for CrawlSection {
    fn default() -> Self {
        let p = CrawlerParams::default();
        Self {
            strip: DesignConfig::from(&p.strip),
            material: p.material,
            bridge_factor: p.bridge_factor,
            ground: p.ground,
            anchors: p.anchors,
            gait: p.gait,
            layout_seed: p.layout_seed,
            pairs_per_channel: p.pairs_per_channel,
            settle: 5.0,
            train_duration: 100.0,
            duration: 100.0,
            anchors_enabled: true,
        }
    }
}

impl CrawlSection {
    pub fn params(&self) -> Result<CrawlerParams> {
        let strip = self.strip.validate("crawl.strip")?;
        self.material.validate().map_err(|e| material_error("crawl.material", e))?;
        let p = CrawlerParams {
            strip,
            material: self.material,
            bridge_factor: self.bridge_factor,
            ground: self.ground,
            anchors: self.anchors,
            gait: self.gait,
            layout_seed: self.layout_seed,
            pairs_per_channel: self.pairs_per_channel,
        };
        p.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(path.replacen("crawler", "crawl", 1), message),
            other => other,
        })?;
        for (name, v) in [("crawl.settle", self.settle), ("crawl.train_duration", self.train_duration), ("crawl.duration", self.duration)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub design: DesignConfig,
    pub material: Material,
    pub sim: SimSection,
    pub roles: RolesSection,
    pub train: TrainSection,
    pub simulate: SimulateSection,
    pub emulate: EmulateSection,
    pub pattern: PatternSection,
    pub modulate: ModulateSection,
    pub sweep: SweepSection,
    pub crawl: CrawlSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            jobs: 1,
            design: DesignConfig::default(),
            material: Material::default(),
            sim: SimSection::default(),
            roles: RolesSection::default(),
            train: TrainSection::default(),
            simulate: SimulateSection::default(),
            emulate: EmulateSection::default(),
            pattern: PatternSection::default(),
            modulate: ModulateSection::default(),
            sweep: SweepSection::default(),
            crawl: CrawlSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| {
            let path = toml_path(text, &e).unwrap_or_else(|| "config".into());
            Error::config(path, e.message().to_string())
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.design()?;
        self.sim()?;
        if self.jobs == 0 {
            return Err(Error::config("jobs", "must be at least 1"));
        }
        for (name, v) in [
            ("simulate.duration", self.simulate.duration),
            ("emulate.duration", self.emulate.duration),
            ("pattern.train_duration", self.pattern.train_duration),
            ("pattern.duration", self.pattern.duration),
            ("pattern.score_window", self.pattern.score_window),
            ("pattern.failure_factor", self.pattern.failure_factor),
            ("modulate.train_duration", self.modulate.train_duration),
            ("modulate.duration", self.modulate.duration),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if let Some(o) = self.pattern.outage {
            if !(o.start >= 0.0 && o.length > 0.0 && o.start.is_finite() && o.length.is_finite()) {
                return Err(Error::config("pattern.outage", "need start >= 0 and length > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.modulate.input_fraction) {
            return Err(Error::config("modulate.input_fraction", "must lie in [0, 1)"));
        }
        self.modulate.schedule()?;
        self.sweep.validate()?;
        self.crawl.params()?;
        Ok(())
    }

    pub fn design(&self) -> Result<MiuraDesign> {
        let d = self.design.validate("design")?;
        self.material.validate().map_err(|e| material_error("material", e))?;
        Ok(d)
    }

    pub fn sim(&self) -> Result<SimConfig> {
        self.sim.to_config(self.design.cols)
    }

    /// Pattern protocol for `task` on the configured sheet.
    pub fn protocol(&self, task: PatternTask) -> Result<Protocol> {
        Ok(Protocol {
            task,
            sim: self.sim()?,
            train_duration: self.pattern.train_duration,
            train: self.train.apply(TrainSpec::pattern(self.seed))?,
            score_window: self.pattern.score_window,
            failure_factor: self.pattern.failure_factor,
        })
    }
}

/// Dotted key path of a TOML deserialization error, when known: the key
/// named in the message, prefixed by the table header above the error.
fn toml_path(text: &str, e: &toml::de::Error) -> Option<String> {
    let msg = e.message();
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    let key = &msg[start..start + len];
    let before = e.span().map_or("", |s| &text[..s.start.min(text.len())]);
    let table = before
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    Some(match table {
        Some(t) if !t.is_empty() => format!("{t}.{key}"),
        _ => key.to_string(),
    })
}

/// One file written by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub description: String,
}

/// Everything needed to re-execute a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved configuration, command-line overrides included.
    pub config: RunConfig,
    pub roles: Option<RoleAssignment>,
    /// Unix seconds.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        m.config.validate()?;
        Ok(m)
    }
}
