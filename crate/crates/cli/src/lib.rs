//! Command implementations behind the `origami-rc` binary. Each command
//! takes a resolved [`RunConfig`], writes its files into one directory and
//! returns the manifest that reproduces it.

use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use origami_reservoir::config::{OutputFile, RunConfig, RunManifest, SweepKind};
use origami_reservoir::dynamics::simulate;
use origami_reservoir::experiments::{self, write_overlay_csv};
use origami_reservoir::locomotion::{build_crawler, gait_mse, run_crawl, settle, train_gait};
use origami_reservoir::pattern::{build_miura, OrigamiMesh};
use origami_reservoir::reservoir::{assign_roles, RoleAssignment, RoleFractions, TrainSpec};
use origami_reservoir::sweep::{feedback_search, fraction_study, geometry_landscape, perturbation_sweep, Sensing};
use origami_reservoir::tasks::{emu_input, PatternTask, EMU_DT};
use origami_reservoir::{Error, Result};

pub const TOOL: &str = "origami-rc";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Emulate,
    Pattern,
    Modulate,
    Sweep,
    Crawl,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Emulate => "emulate",
            Self::Pattern => "pattern",
            Self::Modulate => "modulate",
            Self::Sweep => "sweep",
            Self::Crawl => "crawl",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Self::Simulate,
            "emulate" => Self::Emulate,
            "pattern" => Self::Pattern,
            "modulate" => Self::Modulate,
            "sweep" => Self::Sweep,
            "crawl" => Self::Crawl,
            other => return Err(Error::Parse(format!("unknown command `{other}`"))),
        })
    }
}

/// Process exit status for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::InvalidDesign(_) | Error::InvalidRoles(_) => 2,
        Error::Divergence { .. } | Error::OutputDivergence { .. } | Error::SignalDivergence { .. } => 3,
        Error::AllDesignsFailed(_) => 4,
        _ => 1,
    }
}

/// Output directory plus the inventory of what was written into it.
struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn create(&mut self, name: &str, description: &str) -> Result<BufWriter<File>> {
        self.files.push(OutputFile { path: name.into(), description: description.into() });
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn text(&mut self, name: &str, description: &str, body: &str) -> Result<()> {
        self.files.push(OutputFile { path: name.into(), description: description.into() });
        std::fs::write(self.dir.join(name), body)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, description: &str, value: &T) -> Result<()> {
        let body = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        self.text(name, description, &body)
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Runs `command` with `config` into `out_dir` and writes `manifest.json`.
pub fn run(command: Command, config: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let started = now();
    let mut out = Outputs::new(out_dir)?;
    let mut resolved = config.clone();
    let roles = match command {
        Command::Simulate => cmd_simulate(&mut resolved, &mut out)?,
        Command::Emulate => cmd_emulate(&mut resolved, &mut out)?,
        Command::Pattern => cmd_pattern(&mut resolved, &mut out)?,
        Command::Modulate => cmd_modulate(&mut resolved, &mut out)?,
        Command::Sweep => cmd_sweep(&resolved, &mut out)?,
        Command::Crawl => cmd_crawl(&resolved, &mut out)?,
    };
    let manifest = RunManifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        config: resolved,
        roles,
        started,
        finished: now(),
        outputs: out.files,
    };
    std::fs::write(out_dir.join("manifest.json"), manifest.to_json())?;
    Ok(manifest)
}

/// Re-executes the run described by the manifest at `path`.
pub fn replay(path: &Path, out_dir: &Path) -> Result<RunManifest> {
    let manifest = RunManifest::from_json(&std::fs::read_to_string(path)?)?;
    run(manifest.command.parse()?, &manifest.config, out_dir)
}

fn mesh(config: &RunConfig) -> Result<OrigamiMesh> {
    build_miura(&config.design()?, &config.material)
}

/// Resolves the roles section and pins the result into `config` so the
/// manifest replays without the original file.
fn resolve_roles(config: &mut RunConfig, mesh: &OrigamiMesh, defaults: RoleFractions) -> Result<RoleAssignment> {
    let roles = if let Some(r) = &config.roles.assignment {
        r.clone()
    } else if let Some(path) = &config.roles.file {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::config("roles.file", e.to_string()))?
    } else {
        let fractions = config.roles.fractions(defaults);
        assign_roles(mesh, &fractions, config.roles.seed.unwrap_or(config.seed))?
    };
    roles.validate(mesh)?;
    config.roles.file = None;
    config.roles.assignment = Some(roles.clone());
    Ok(roles)
}

fn cmd_simulate(config: &mut RunConfig, out: &mut Outputs) -> Result<Option<RoleAssignment>> {
    let mesh = mesh(config)?;
    let sim = config.sim()?;
    let roles = resolve_roles(config, &mesh, RoleFractions::emulation())?;
    let rest: Vec<f64> = roles.input.hinges.iter().map(|&h| mesh.hinges[h].rest_angle).collect();
    let weights = roles.input.weights.clone();
    let mut drive = |t: f64, _: &[f64], targets: &mut [f64]| -> Result<()> {
        let u = emu_input((t / EMU_DT).round() as usize);
        for ((out, r), w) in targets.iter_mut().zip(&rest).zip(&weights) {
            *out = (r + w * u.tanh()).clamp(0.0, 2.0 * std::f64::consts::PI);
        }
        Ok(())
    };
    let trace = simulate(&mesh, &sim, &roles.input.hinges, &roles.sensor_hinges, &mut drive, config.simulate.duration)?;
    trace.write_csv(out.create("trace.csv", "sensor angles: t, phi_<hinge>")?)?;
    out.json("report.json", "run summary", &json!({ "rows": trace.len(), "duration": config.simulate.duration, "dt": sim.dt }))?;
    Ok(Some(roles))
}

fn cmd_emulate(config: &mut RunConfig, out: &mut Outputs) -> Result<Option<RoleAssignment>> {
    let mesh = mesh(config)?;
    let sim = config.sim()?;
    let mut roles = resolve_roles(config, &mesh, RoleFractions::emulation())?;
    if config.emulate.sensing == Sensing::Actuated {
        let mut s = roles.input.hinges.clone();
        s.sort_unstable();
        roles = roles.with_sensors(s);
    }
    let spec = config.train.apply(TrainSpec::emulation(roles.seed))?;
    let run = experiments::emulation(&mesh, &roles, config.emulate.duration, &spec, &sim)?;
    std::fs::write(out.dir.join("weights.json"), run.weights.to_json())?;
    out.files.push(OutputFile { path: "weights.json".into(), description: "readout weights".into() });
    write_overlay_csv(out.create("overlay.csv", "order2, order10, volterra targets and outputs")?, 0.0, sim.sample_dt(), &run.targets.channels, &run.outputs)?;
    out.json(
        "report.json",
        "per-channel MSE (order2, order10, volterra)",
        &json!({ "sensing": config.emulate.sensing, "train_mse": run.train_mse, "test_mse": run.test_mse }),
    )?;
    Ok(Some(roles))
}

/// Roles for a pattern task: the best of a feedback search, or the roles
/// section.
fn pattern_roles(config: &mut RunConfig, mesh: &OrigamiMesh, task: PatternTask, search: usize, out: &mut Outputs) -> Result<RoleAssignment> {
    if search == 0 {
        return resolve_roles(config, mesh, RoleFractions::pattern());
    }
    let protocol = config.protocol(task)?;
    let fractions = config.roles.fractions(RoleFractions::pattern());
    let found = feedback_search(mesh, &fractions, search, &protocol, config.seed, config.jobs)?;
    found.result.write_csv(out.create("search.csv", "feedback search: one row per design")?)?;
    out.text("search_aggregate.json", "feedback search aggregate", &found.result.aggregate_json())?;
    Ok(found.best.roles)
}

fn cmd_pattern(config: &mut RunConfig, out: &mut Outputs) -> Result<Option<RoleAssignment>> {
    let mesh = mesh(config)?;
    let task = config.pattern.task;
    let roles = pattern_roles(config, &mesh, task, config.pattern.search, out)?;
    let protocol = config.protocol(task)?;
    let dt = protocol.sim.sample_dt();
    let section = config.pattern.clone();
    let run = experiments::pattern(&mesh, &roles, &protocol, section.duration.max(section.score_window), roles.seed)?;
    std::fs::write(out.dir.join("weights.json"), run.weights.to_json())?;
    out.files.push(OutputFile { path: "weights.json".into(), description: "readout weights".into() });
    let start = run.train_len;
    let targets = run.reference.window(start, run.outputs[0].len())?;
    write_overlay_csv(out.create("closed_loop.csv", "closed loop continued from training")?, start as f64 * dt, dt, &targets, &run.outputs)?;
    let mut report = json!({ "task": task, "train_mse": run.train_mse, "test_mse": run.test_mse, "mse": run.mse });
    if let Some(o) = section.outage {
        let rec = experiments::recovery(&mesh, &roles, &run, &protocol, o.start, o.length, &section.recovery)?;
        let targets = run.reference.window(start, rec.run.outputs[0].len())?;
        write_overlay_csv(out.create("outage.csv", "closed loop with a sensor and actuator outage")?, start as f64 * dt, dt, &targets, &rec.run.outputs)?;
        report["outage"] = json!({ "start": o.start, "length": o.length, "pre_mse": rec.pre_mse, "post_mse": rec.post_mse, "recovered": rec.recovered });
    }
    if let Some(d) = section.rest_run {
        let (rep, outputs) = experiments::stability(&mesh, &roles, &run, &protocol, d, &section.recovery)?;
        if !outputs.is_empty() {
            let n = outputs[0].len();
            let reference = origami_reservoir::tasks::pattern_reference(task, protocol.sim.dt, n * protocol.sim.record_stride)?;
            let targets: Vec<Vec<f64>> = reference.channels.iter().map(|c| c.iter().step_by(protocol.sim.record_stride).copied().collect()).collect();
            write_overlay_csv(out.create("from_rest.csv", "closed loop started from rest; targets are not phase aligned")?, 0.0, dt, &targets, &outputs)?;
        }
        report["from_rest"] = serde_json::to_value(rep).map_err(|e| Error::Parse(e.to_string()))?;
    }
    out.json("report.json", "training and closed-loop MSE", &report)?;
    config.roles.assignment = Some(roles.clone());
    config.pattern.search = 0;
    Ok(Some(roles))
}

fn cmd_modulate(config: &mut RunConfig, out: &mut Outputs) -> Result<Option<RoleAssignment>> {
    let mesh = mesh(config)?;
    let section = config.modulate.clone();
    let base = if section.search > 0 {
        pattern_roles(config, &mesh, PatternTask::QuadLc, section.search, out)?
    } else {
        let mut r = resolve_roles(config, &mesh, RoleFractions::pattern())?;
        r.input = origami_reservoir::reservoir::ActuatorGroup { hinges: Vec::new(), weights: Vec::new() };
        r
    };
    let roles = if base.input.hinges.is_empty() { experiments::with_input(&mesh, &base, section.input_fraction, base.seed)? } else { base };
    let sim = config.sim()?;
    let washout = TrainSpec::pattern(roles.seed).washout;
    let base_spec = TrainSpec { washout, train_window: section.train_duration - washout, test_window: 0.0, ..TrainSpec::pattern(roles.seed) };
    let spec = config.train.apply(base_spec)?;
    let schedule = section.schedule()?;
    let run = experiments::modulation(&mesh, &roles, &schedule, section.train_duration, section.duration, &spec, &sim, config.pattern.failure_factor)?;
    std::fs::write(out.dir.join("weights.json"), run.weights.to_json())?;
    out.files.push(OutputFile { path: "weights.json".into(), description: "readout weights".into() });
    let dt = sim.sample_dt();
    let mut w = csv::Writer::from_writer(out.create("modulation.csv", "t, epsilon, target_0, target_1, output_0, output_1")?);
    w.write_record(["t", "epsilon", "target_0", "target_1", "output_0", "output_1"])?;
    for k in 0..run.outputs[0].len() {
        let t = section.train_duration + k as f64 * dt;
        w.write_record([t, run.epsilon[k], run.targets[0][k], run.targets[1][k], run.outputs[0][k], run.outputs[1][k]].map(|v| v.to_string()))?;
    }
    w.flush()?;
    out.json(
        "report.json",
        "modulation MSE and per-level amplitudes",
        &json!({ "train_mse": run.train_mse, "mse": run.mse, "amplitudes": run.amplitudes, "amplitude_tracks_epsilon": run.amplitude_tracks_epsilon() }),
    )?;
    config.roles.assignment = Some(roles.clone());
    config.modulate.search = 0;
    Ok(Some(roles))
}

fn cmd_sweep(config: &RunConfig, out: &mut Outputs) -> Result<Option<RoleAssignment>> {
    let mesh = mesh(config)?;
    let s = &config.sweep;
    let task = config.pattern.task;
    let protocol = config.protocol(task)?;
    let fractions = config.roles.fractions(RoleFractions::pattern());
    match s.kind {
        SweepKind::Feedback => {
            let found = feedback_search(&mesh, &fractions, s.n, &protocol, config.seed, config.jobs)?;
            found.result.write_csv(out.create("sweep.csv", "one row per design")?)?;
            out.text("aggregate.json", "mean, std, extremes and failures", &found.result.aggregate_json())?;
            std::fs::write(out.dir.join("best_roles.json"), serde_json::to_string_pretty(&found.best.roles).map_err(|e| Error::Parse(e.to_string()))?)?;
            out.files.push(OutputFile { path: "best_roles.json".into(), description: "roles of the lowest-MSE design".into() });
            Ok(Some(found.best.roles))
        }
        SweepKind::Fraction => {
            let studies = fraction_study(&mesh, &s.fractions, s.n, s.sensing, &protocol, config.seed, config.jobs)?;
            let mut summary = Vec::new();
            for (f, result) in &studies {
                let name = format!("fraction_{f}.csv");
                result.write_csv(out.create(&name, "one row per design at this feedback fraction")?)?;
                summary.push(json!({ "fraction": f, "aggregate": result.aggregate }));
            }
            out.json("aggregate.json", "aggregate per fraction", &summary)?;
            Ok(None)
        }
        kind => {
            let base = if s.base_search > 0 {
                let found = feedback_search(&mesh, &fractions, s.base_search, &protocol, config.seed, config.jobs)?;
                found.result.write_csv(out.create("base_search.csv", "feedback search for the base design")?)?;
                found.best.roles
            } else {
                let mut c = config.clone();
                resolve_roles(&mut c, &mesh, RoleFractions::pattern())?
            };
            if let Some(p) = kind.perturbation() {
                let result = perturbation_sweep(&mesh, &base, p, &s.ranges(), config.design.a, s.n, &protocol, config.seed, config.jobs)?;
                result.write_csv(out.create("sweep.csv", "one row per perturbed sample")?)?;
                out.text("aggregate.json", "mean, std, extremes and failures", &result.aggregate_json())?;
            } else {
                let gammas: Vec<f64> = s.gammas_deg.iter().map(|g| g.to_radians()).collect();
                let thetas: Vec<f64> = s.thetas_deg.iter().map(|t| t.to_radians()).collect();
                let maps = geometry_landscape(&config.design()?, &config.material, &base, &s.ratios, &gammas, &thetas, &protocol, config.seed, config.jobs)?;
                let mut summary = Vec::new();
                for (deg, m) in s.thetas_deg.iter().zip(&maps) {
                    m.write_csv(out.create(&format!("landscape_theta{deg}.csv"), "rows gamma_deg, columns a/b, empty = failed")?)?;
                    summary.push(json!({ "theta_deg": deg, "failures": m.failures(), "median": m.median() }));
                }
                out.json("aggregate.json", "failures and median MSE per folding angle", &summary)?;
            }
            Ok(Some(base))
        }
    }
}

fn cmd_crawl(config: &RunConfig, out: &mut Outputs) -> Result<Option<RoleAssignment>> {
    let c = &config.crawl;
    let params = c.params()?;
    let (mesh, design) = build_crawler(&params)?;
    let initial = settle(&mesh, &design, c.settle)?;
    let washout = TrainSpec::pattern(config.seed).washout;
    let base = TrainSpec { washout, train_window: c.train_duration - washout, test_window: 0.0, ..TrainSpec::pattern(config.seed) };
    let spec = config.train.apply(base)?;
    let training = train_gait(&mesh, &design, &initial, c.train_duration, c.duration, &spec)?;
    std::fs::write(out.dir.join("weights.json"), training.weights.to_json())?;
    out.files.push(OutputFile { path: "weights.json".into(), description: "gait readout weights".into() });
    training.log.write_csv(out.create("training.csv", "teacher-forced gait log")?)?;
    let mut report = json!({ "train_mse": training.train_mse, "test_mse": training.test_mse, "anchors": c.anchors_enabled });
    if c.duration > 0.0 {
        let crawl = run_crawl(&mesh, &design, &training.weights, &training.final_state, c.duration, c.anchors_enabled)?;
        crawl.log.write_csv(out.create("crawl.csv", "closed-loop crawl log")?)?;
        let window = ((config.pattern.score_window / params.sim_config().sample_dt()).round() as usize).min(crawl.log.len());
        report["gait_mse"] = json!(gait_mse(&training, &crawl, window)?);
        report["net_displacement"] = json!(crawl.log.net_displacement());
        report["cycle_displacements"] = json!(crawl.log.cycle_displacements(params.gait.period()));
    }
    out.json("report.json", "gait MSE and displacement", &report)?;
    Ok(Some(design.roles))
}
