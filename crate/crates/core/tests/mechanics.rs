use origami_reservoir::dynamics::{simulate, SimConfig, SimState, Simulator};
use origami_reservoir::pattern::{build_miura, Material, MiuraDesign, OrigamiMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sheet(n: usize) -> OrigamiMesh {
    build_miura(&MiuraDesign::default().with_size(n, n), &Material::default()).unwrap()
}

fn kicked(mesh: &OrigamiMesh, drift: Vec3, seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SimState::at_rest(mesh);
    for v in s.velocities.iter_mut() {
        *v = drift + Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
    }
    s
}

fn momentum(mesh: &OrigamiMesh, s: &SimState) -> Vec3 {
    s.velocities.iter().zip(&mesh.masses).map(|(v, m)| v * *m).sum()
}

#[test]
fn undamped_energy_and_momentum_are_conserved() {
    let mesh = sheet(5);
    let config = SimConfig { dt: 1e-4, damping_ratio: 0.0, ..SimConfig::default() };
    let mut sim = Simulator::new(&mesh, &config, &[]).unwrap();
    let mut state = kicked(&mesh, Vec3::new(0.01, -0.005, 0.002), 7);
    let e0 = sim.energy(&state).unwrap().total();
    let p0 = momentum(&mesh, &state);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        sim.step(&mut state).unwrap();
        let e = sim.energy(&state).unwrap().total();
        worst = worst.max((e - e0).abs() / e0);
    }
    let dp = (momentum(&mesh, &state) - p0).norm() / p0.norm();
    assert!(worst < 5e-3, "energy drift {worst}");
    assert!(dp < 1e-6, "momentum drift {dp}");
    // The sheet did deform.
    assert!(state.max_displacement(&mesh) > 1e-4);
}

#[test]
fn internal_forces_sum_to_zero() {
    let mesh = sheet(5);
    let state = kicked(&mesh, Vec3::zeros(), 3);
    let mut x = state.positions.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in x.iter_mut() {
        *p += Vec3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
    }
    let creases = mesh.crease_ids();
    let mut sim = Simulator::new(&mesh, &SimConfig::default(), &creases[..5]).unwrap();
    sim.targets_mut().iter_mut().for_each(|t| *t += 0.3);
    // Damping is excluded: it only removes the local average velocity.
    let f = sim.total_forces(&x, &vec![Vec3::zeros(); x.len()]).unwrap();
    let total: Vec3 = f.iter().sum();
    let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(total.norm() < 1e-9 * scale, "{total:?} vs {scale}");
}

#[test]
fn runs_are_bit_identical() {
    let mesh = sheet(5);
    let config = SimConfig::default().pin_corner_facet(5);
    let creases = mesh.crease_ids();
    let run = || {
        let mut drive = |t: f64, _: &[f64], targets: &mut [f64]| {
            targets[0] = mesh.hinges[creases[0]].rest_angle + 0.2 * (3.0 * t).sin();
            Ok(())
        };
        simulate(&mesh, &config, &creases[..1], &creases, &mut drive, 2.0).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
}

#[test]
fn baseline_sheet_is_stable_for_long_runs() {
    let mesh = sheet(9);
    let config = SimConfig { record_stride: 100, ..SimConfig::default().pin_corner_facet(9) };
    let creases = mesh.crease_ids();
    let rest: Vec<f64> = creases.iter().map(|&h| mesh.hinges[h].rest_angle).collect();
    let mut drive = |t: f64, _: &[f64], targets: &mut [f64]| {
        for (k, tgt) in targets.iter_mut().enumerate() {
            *tgt = rest[k] + 0.3 * (0.7 * t + k as f64).sin().tanh();
        }
        Ok(())
    };
    let trace = simulate(&mesh, &config, &creases[..20], &creases, &mut drive, 100.0).unwrap();
    assert!(trace.data.iter().all(|v| v.is_finite()));
}

#[test]
fn gravity_sag_settles() {
    let mesh = sheet(5);
    let config = SimConfig { gravity: [0.0, 0.0, -9.81], damping_ratio: 0.5, ..SimConfig::default().pin_corner_facet(5) };
    let mut sim = Simulator::new(&mesh, &config, &[]).unwrap();
    let mut state = SimState::at_rest(&mesh);
    for _ in 0..20_000 {
        sim.step(&mut state).unwrap();
    }
    let speed = state.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(speed < 1e-3, "still moving at {speed}");
    let sag = state.positions.iter().zip(&mesh.positions).map(|(a, b)| b.z - a.z).fold(f64::MIN, f64::max);
    // The soft sheet hangs from the pinned facet; what is left is a static equilibrium.
    assert!(sag > 0.0, "sag {sag}");
    let f = sim.total_forces(&state.positions, &state.velocities).unwrap();
    let weight = mesh.total_mass() * 9.81;
    let pinned = &config.pinned_nodes;
    let residual = f.iter().enumerate().filter(|(i, _)| !pinned.contains(i)).map(|(_, v)| v.norm()).fold(0.0, f64::max);
    assert!(residual < 1e-3 * weight, "residual force {residual} vs weight {weight}");
}
