//! End-to-end acceptance checks. Each test prints one PASS or FAIL line.
//!
//! The 72-design searches are shared through `OnceLock`, so running the
//! whole file costs roughly an hour and a quarter on one core.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use origami_reservoir::config::{ModulateSection, RunManifest, SweepSection};
use origami_reservoir::dynamics::{SimConfig, SimState, Simulator};
use origami_reservoir::experiments::{self, PatternRun};
use origami_reservoir::locomotion::{build_crawler, gait_mse, run_crawl, settle, train_gait, CrawlerParams};
use origami_reservoir::pattern::{build_miura, dihedral_from_points, hinge_frame_from_points, Material, MiuraDesign, OrigamiMesh, Vec3};
use origami_reservoir::reservoir::{ActuatorGroup, RecoveryWindow, RoleAssignment, RoleFractions, TrainSpec};
use origami_reservoir::sweep::{feedback_search, fraction_study, geometry_landscape, perturbation_sweep, Perturbation, Protocol, SearchResult, Sensing};
use origami_reservoir::tasks::PatternTask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 1;
const SEARCH: usize = 72;
const SAMPLES: usize = 24;

fn verdict(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn baseline() -> &'static OrigamiMesh {
    static MESH: OnceLock<OrigamiMesh> = OnceLock::new();
    MESH.get_or_init(|| build_miura(&MiuraDesign::default(), &Material::default()).unwrap())
}

fn protocol(task: PatternTask) -> Protocol {
    Protocol::pattern(task, MiuraDesign::default().n_cols)
}

fn search(task: PatternTask) -> &'static SearchResult {
    static QUAD: OnceLock<SearchResult> = OnceLock::new();
    static VDP: OnceLock<SearchResult> = OnceLock::new();
    static LISSAJOUS: OnceLock<SearchResult> = OnceLock::new();
    let cell = match task {
        PatternTask::QuadLc => &QUAD,
        PatternTask::VdpLc => &VDP,
        PatternTask::Lissajous => &LISSAJOUS,
    };
    cell.get_or_init(|| {
        feedback_search(baseline(), &RoleFractions::pattern(), SEARCH, &protocol(task), MASTER_SEED, 1).unwrap()
    })
}

/// Training plus a 10 s warm closed loop for the best design of `task`.
fn best_run(task: PatternTask, roles: &RoleAssignment) -> PatternRun {
    let s = search(task);
    let seed = s.result.records[s.best.index].seed;
    let p = protocol(task);
    experiments::pattern(baseline(), roles, &p, p.score_window, seed).unwrap()
}

/// Mean square of the task's reference over one scoring window.
fn target_power(task: PatternTask) -> f64 {
    let p = protocol(task);
    let r = p.reference(0.0).unwrap();
    let n = (p.score_window / p.sim.sample_dt()).round() as usize;
    let tail: Vec<&Vec<f64>> = r.channels.iter().collect();
    tail.iter().map(|c| c[c.len() - n..].iter().map(|v| v * v).sum::<f64>() / n as f64).sum::<f64>() / tail.len() as f64
}

/// A window is on target when its MSE is below 1% of the target power.
fn on_target(task: PatternTask, mse: f64) -> bool {
    mse.is_finite() && mse < 1e-2 * target_power(task)
}

#[test]
fn gradient_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 128 {
        let x: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02))).collect();
        let axis = (x[0] - x[1]).norm();
        let m = (x[2] - x[1]).cross(&(x[0] - x[1]));
        let n = (x[0] - x[1]).cross(&(x[0] - x[3]));
        if axis < 5e-3 || m.norm() < 2e-3 * axis || n.norm() < 2e-3 * axis {
            continue;
        }
        let frame = hinge_frame_from_points(&x[0], &x[1], &x[2], &x[3]).unwrap();
        if frame.angle < 0.05 || frame.angle > 2.0 * std::f64::consts::PI - 0.05 {
            continue;
        }
        let scale = frame.grad.iter().map(|g| g.amax()).fold(0.0, f64::max);
        let h = 1e-7;
        for node in 0..4 {
            for k in 0..3 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[node][k] += h;
                xm[node][k] -= h;
                let fd = (dihedral_from_points(&xp[0], &xp[1], &xp[2], &xp[3]).unwrap()
                    - dihedral_from_points(&xm[0], &xm[1], &xm[2], &xm[3]).unwrap())
                    / (2.0 * h);
                worst = worst.max((fd - frame.grad[node][k]).abs() / scale);
            }
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict("gradient oracle", worst < 1e-5 && secs < 10.0, format!("{checked} configurations, worst relative error {worst:.2e}, {secs:.2} s"));
}

#[test]
fn mechanics_conservation() {
    let start = Instant::now();
    let mesh = build_miura(&MiuraDesign::default().with_size(5, 5), &Material::default()).unwrap();
    let config = SimConfig { dt: 1e-4, damping_ratio: 0.0, gravity: [0.0; 3], pinned_nodes: vec![], ..SimConfig::default() };
    let mut sim = Simulator::new(&mesh, &config, &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = SimState::at_rest(&mesh);
    for v in state.velocities.iter_mut() {
        *v = Vec3::new(0.01, -0.005, 0.002) + Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
    }
    let momentum = |s: &SimState| -> Vec3 { s.velocities.iter().zip(&mesh.masses).map(|(v, m)| v * *m).sum() };
    let e0 = sim.energy(&state).unwrap().total();
    let p0 = momentum(&state);
    let mut drift = 0.0f64;
    for _ in 0..10_000 {
        sim.step(&mut state).unwrap();
        drift = drift.max((sim.energy(&state).unwrap().total() - e0).abs() / e0);
    }
    let dp = (momentum(&state) - p0).norm() / p0.norm();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "mechanics conservation",
        drift < 5e-3 && dp < 1e-6 && secs < 60.0,
        format!("energy drift {drift:.2e}, momentum drift {dp:.2e}, {secs:.1} s"),
    );
}

#[test]
fn hinge_count() {
    let mesh = build_miura(&MiuraDesign::default().with_size(7, 7), &Material::default()).unwrap();
    let n = mesh.crease_ids().len();
    verdict("hinge count", n == 60, format!("7x7 sheet has {n} crease angles"));
}

#[test]
fn emulation_ordering() {
    let mesh = baseline();
    let roles = origami_reservoir::reservoir::assign_roles(mesh, &RoleFractions::emulation(), MASTER_SEED).unwrap();
    let mut actuated = roles.input.hinges.clone();
    actuated.sort_unstable();
    let spec = TrainSpec::emulation(MASTER_SEED);
    let config = SimConfig::default().pin_corner_facet(MiuraDesign::default().n_cols);
    let all = experiments::emulation(mesh, &roles, 100.0, &spec, &config).unwrap();
    let only = experiments::emulation(mesh, &roles.clone().with_sensors(actuated), 100.0, &spec, &config).unwrap();
    let ordered = |m: &[f64]| m[0] < m[1] && m[1] < m[2];
    let ratios: Vec<f64> = only.test_mse.iter().zip(&all.test_mse).map(|(a, b)| a / b).collect();
    verdict(
        "emulation ordering",
        ordered(&all.test_mse) && ordered(&only.test_mse) && ratios.iter().all(|r| *r < 10.0),
        format!("all sensors {:.2e}, actuated only {:.2e}, degradation {:.2?}", all.test_mse.iter().copied().fold(0.0, f64::max), only.test_mse.iter().copied().fold(0.0, f64::max), ratios)
            + &format!(" (order2/order10/volterra {:.2e}/{:.2e}/{:.2e})", all.test_mse[0], all.test_mse[1], all.test_mse[2]),
    );
}

#[test]
fn pattern_generation() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, bar) in [(PatternTask::QuadLc, 1e-5), (PatternTask::VdpLc, 1e-3), (PatternTask::Lissajous, 1e-2)] {
        let s = search(task);
        let ok = s.best.mse <= bar;
        pass &= ok;
        parts.push(format!("{task:?} {:.3e} (bar {bar:.0e}, {} of {SEARCH} failed)", s.best.mse, s.result.aggregate.failures));
    }
    verdict("pattern generation", pass, parts.join("; "));
}

#[test]
fn stability_from_rest() {
    let mut pass = true;
    let mut parts = Vec::new();
    for task in [PatternTask::QuadLc, PatternTask::VdpLc] {
        let roles = search(task).best.roles.clone();
        let run = best_run(task, &roles);
        let (rep, _) = experiments::stability(baseline(), &roles, &run, &protocol(task), 1000.0, &RecoveryWindow::default()).unwrap();
        let ok = rep.stable && rep.trailing_mse <= 10.0 * rep.warm_mse && on_target(task, rep.trailing_mse);
        pass &= ok;
        parts.push(format!("{task:?} warm {:.2e} trailing {:.2e} bounded {}", rep.warm_mse, rep.trailing_mse, rep.stable));
    }
    verdict("stability from rest (1000 s)", pass, parts.join("; "));
}

#[test]
fn failure_recovery() {
    let task = PatternTask::VdpLc;
    let roles = search(task).best.roles.clone();
    let mut feedback = roles.feedback_hinges();
    feedback.sort_unstable();
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, r) in [("Ns=N", roles.clone()), ("Ns=0.3N", roles.clone().with_sensors(feedback))] {
        let outcome = std::panic::catch_unwind(|| {
            let run = best_run(task, &r);
            experiments::recovery(baseline(), &r, &run, &protocol(task), 20.0, 10.0, &RecoveryWindow::default())
        });
        match outcome {
            Ok(Ok(rep)) => {
                let ok = rep.recovered && on_target(task, rep.pre_mse);
                pass &= ok;
                parts.push(format!("{label} pre {:.2e} post {:.2e} recovered {}", rep.pre_mse, rep.post_mse, rep.recovered));
            }
            Ok(Err(e)) => {
                pass = false;
                parts.push(format!("{label} error: {e}"));
            }
            Err(_) => {
                pass = false;
                parts.push(format!("{label} training or warm loop failed"));
            }
        }
    }
    verdict("failure recovery (10 s outage)", pass, parts.join("; "));
}

#[test]
fn modulation() {
    let mesh = baseline();
    let base = RoleAssignment { input: ActuatorGroup { hinges: vec![], weights: vec![] }, ..search(PatternTask::QuadLc).best.roles.clone() };
    let roles = experiments::with_input(mesh, &base, 0.15, base.seed).unwrap();
    let section = ModulateSection::default();
    let washout = TrainSpec::pattern(roles.seed).washout;
    let spec = TrainSpec { washout, train_window: section.train_duration - washout, test_window: 0.0, ..TrainSpec::pattern(roles.seed) };
    let sim = protocol(PatternTask::QuadLc).sim;
    let run = experiments::modulation(mesh, &roles, &section.schedule().unwrap(), section.train_duration, section.duration, &spec, &sim, 10.0);
    match run {
        Ok(run) => {
            let amps: Vec<String> = run.amplitudes.iter().map(|a| format!("eps {} -> {:.3} (target {:.3})", a.epsilon, a.output, a.target)).collect();
            verdict(
                "modulation",
                run.amplitude_tracks_epsilon() && run.mse <= 1e-2,
                format!("MSE {:.2e}; {}", run.mse, amps.join(", ")),
            );
        }
        Err(e) => verdict("modulation", false, format!("closed loop failed: {e}")),
    }
}

#[test]
fn parametric_trends() {
    let mesh = baseline();
    let task = PatternTask::QuadLc;
    let p = protocol(task);
    let base = &search(task).best.roles;
    let ranges = SweepSection::default().ranges();
    let a = MiuraDesign::default().a;
    let mass = perturbation_sweep(mesh, base, Perturbation::Mass, &ranges, a, SAMPLES, &p, MASTER_SEED, 1).unwrap();
    let stiff = perturbation_sweep(mesh, base, Perturbation::Stiffness, &ranges, a, SAMPLES, &p, MASTER_SEED, 1).unwrap();
    let (m, s) = (&mass.aggregate, &stiff.aggregate);
    let mass_ok = m.std > s.std && (m.max - m.min) > (s.max - s.min);
    let mass_line = format!("mass std {:.2e} range {:.2e} vs stiffness std {:.2e} range {:.2e}", m.std, m.max - m.min, s.std, s.max - s.min);

    let fr = fraction_study(mesh, &[0.2, 0.3, 0.4, 0.5], SAMPLES, Sensing::All, &p, MASTER_SEED, 1).unwrap();
    let rate = |i: usize| fr[i].1.aggregate.failures as f64 / fr[i].1.aggregate.count as f64;
    let med = |i: usize| fr[i].1.aggregate.median;
    let marginal = (med(1) / med(3)).log10().abs() < 1.0;
    let fraction_ok = fr[0].1.aggregate.failures >= 1 && (1..4).all(|i| rate(i) < rate(0)) && marginal;
    let fraction_line = format!(
        "failure rates {:.2}/{:.2}/{:.2}/{:.2}, medians {:.2e}/{:.2e}/{:.2e}/{:.2e}",
        rate(0), rate(1), rate(2), rate(3), med(0), med(1), med(2), med(3)
    );

    let ratios = [1.0, 1.5, 2.0, 2.5, 3.0];
    let gammas: Vec<f64> = [30.0f64, 40.0, 50.0, 60.0, 70.0].iter().map(|g| g.to_radians()).collect();
    let thetas = [50.0f64.to_radians(), 70.0f64.to_radians()];
    let maps = geometry_landscape(&MiuraDesign::default(), &Material::default(), base, &ratios, &gammas, &thetas, &p, MASTER_SEED, 1).unwrap();
    let (l50, l70) = (&maps[0], &maps[1]);
    let geometry_ok = l70.failures() < l50.failures() && l70.median() < l50.median();
    let geometry_line = format!(
        "theta 50: {} failed, median {:.2e}; theta 70: {} failed, median {:.2e}",
        l50.failures(), l50.median(), l70.failures(), l70.median()
    );
    println!("  mass vs stiffness: {} {mass_line}", if mass_ok { "ok" } else { "not met" });
    println!("  feedback fraction: {} {fraction_line}", if fraction_ok { "ok" } else { "not met" });
    println!("  geometry: {} {geometry_line}", if geometry_ok { "ok" } else { "not met" });
    verdict(
        "parametric trends (24 samples each)",
        mass_ok && fraction_ok && geometry_ok,
        format!("mass {mass_ok}, fraction {fraction_ok}, geometry {geometry_ok}"),
    );
}

#[test]
fn crawler() {
    let params = CrawlerParams::default();
    let (mesh, design) = build_crawler(&params).unwrap();
    let initial = settle(&mesh, &design, 5.0).unwrap();
    let washout = TrainSpec::pattern(MASTER_SEED).washout;
    let spec = TrainSpec { washout, train_window: 100.0 - washout, test_window: 0.0, ..TrainSpec::pattern(MASTER_SEED) };
    let duration = 100.0;
    let training = train_gait(&mesh, &design, &initial, 100.0, duration, &spec).unwrap();
    let period = params.gait.period();
    let anchored = run_crawl(&mesh, &design, &training.weights, &training.final_state, duration, true);
    let free = run_crawl(&mesh, &design, &training.weights, &training.final_state, duration, false);
    match (anchored, free) {
        (Ok(a), Ok(f)) => {
            let window = (10.0 / params.sim_config().sample_dt()).round() as usize;
            let mse = gait_mse(&training, &a, window).unwrap();
            let cycles = a.log.cycle_displacements(period);
            let half = cycles.len() / 2;
            let late: f64 = cycles[half..].iter().sum();
            let net = a.log.net_displacement();
            let control = f.log.net_displacement();
            let pass = mse <= 1e-2 && cycles.len() >= 10 && net > 0.0 && late > 0.0 && control.abs() < 0.05 * net;
            verdict(
                "crawler",
                pass,
                format!("gait MSE {mse:.2e}, {} cycles, net {net:.4} m (second half {late:.4} m), anchors off {control:.4} m", cycles.len()),
            );
        }
        (a, f) => verdict(
            "crawler",
            false,
            format!("closed loop failed: anchored {:?}, anchors off {:?}", a.err().map(|e| e.to_string()), f.err().map(|e| e.to_string())),
        ),
    }
}

fn cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_origami-rc")).args(args).status().unwrap();
    assert!(status.success(), "origami-rc {args:?} exited with {status}");
}

fn same_outputs(a: &Path, b: &Path) -> Vec<String> {
    let manifest = RunManifest::from_json(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    manifest
        .outputs
        .iter()
        .filter(|o| std::fs::read(a.join(&o.path)).unwrap() != std::fs::read(b.join(&o.path)).unwrap())
        .map(|o| o.path.clone())
        .collect()
}

#[test]
fn determinism() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let config = root.join("small.toml");
    std::fs::write(&config, "[design]\nrows = 5\ncols = 5\n").unwrap();
    let dir = |name: &str| root.join(name).to_string_lossy().into_owned();
    let cfg = config.to_string_lossy().into_owned();
    let mut differing = Vec::new();
    for (name, args) in [
        ("simulate", vec!["simulate", "--duration", "5"]),
        ("emulate", vec!["emulate", "--config", &cfg]),
        ("pattern", vec!["pattern", "--config", &cfg, "--task", "quad_lc"]),
    ] {
        let first = dir(name);
        let again = dir(&format!("{name}-replay"));
        let mut a = args.clone();
        a.extend(["--out-dir", first.as_str()]);
        cli(&a);
        cli(&["replay", &format!("{first}/manifest.json"), "--out-dir", &again]);
        differing.extend(same_outputs(Path::new(&first), Path::new(&again)).into_iter().map(|f| format!("{name}/{f}")));
    }
    let (one, two) = (dir("sweep-j1"), dir("sweep-j2"));
    cli(&["sweep", "--config", &cfg, "--kind", "feedback", "--n", "4", "--jobs", "1", "--out-dir", &one]);
    cli(&["sweep", "--config", &cfg, "--kind", "feedback", "--n", "4", "--jobs", "2", "--out-dir", &two]);
    differing.extend(same_outputs(Path::new(&one), Path::new(&two)).into_iter().map(|f| format!("sweep jobs/{f}")));
    verdict(
        "determinism",
        differing.is_empty(),
        if differing.is_empty() { "replays and --jobs 1/2 sweeps are bit-identical".into() } else { format!("differing files: {differing:?}") },
    );
}
