//! Spatially correlated vertex imperfections.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::OrigamiMesh;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImperfectionSpec {
    /// Perturbation scale χ (m).
    pub chi: f64,
    /// Correlation length l (m).
    pub corr_length: f64,
    pub seed: u64,
}

impl ImperfectionSpec {
    /// χ = 0.4a, l = 4a.
    pub fn for_crease_length(a: f64, seed: u64) -> Self {
        Self {
            chi: 0.4 * a,
            corr_length: 4.0 * a,
            seed,
        }
    }
}

/// `σ(d) = χ exp(-d / l)`.
pub fn imperfection_kernel(spec: &ImperfectionSpec, distance: f64) -> f64 {
    spec.chi * (-distance / spec.corr_length).exp()
}

/// Displaces every node by a zero-mean Gaussian field with covariance
/// `C_ij = χ σ(|x_i - x_j|)`, one independent draw per axis, and rebuilds
/// the rest state from the perturbed positions.
pub fn perturb_vertices(mesh: &OrigamiMesh, spec: &ImperfectionSpec) -> Result<OrigamiMesh> {
    if !(spec.chi >= 0.0 && spec.chi.is_finite()) {
        return Err(Error::InvalidDesign("chi: must be non-negative".into()));
    }
    if !(spec.corr_length > 0.0 && spec.corr_length.is_finite()) {
        return Err(Error::InvalidDesign("corr_length: must be positive".into()));
    }
    if spec.chi == 0.0 {
        return Ok(mesh.clone());
    }
    let n = mesh.node_count();
    let x = &mesh.positions;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        spec.chi * imperfection_kernel(spec, (x[i] - x[j]).norm())
    });
    let chol = cov.cholesky().ok_or(Error::CovarianceFactorization)?;
    let lower = chol.l();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = mesh.clone();
    for axis in 0..3 {
        let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let field = &lower * z;
        for (k, p) in out.positions.iter_mut().enumerate() {
            p[axis] += field[k];
        }
    }
    out.reset_rest_state()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{build_miura, Material, MiuraDesign};

    fn mesh() -> OrigamiMesh {
        build_miura(&MiuraDesign::default().with_size(5, 5), &Material::default()).unwrap()
    }

    #[test]
    fn zero_chi_is_identity() {
        let m = mesh();
        let spec = ImperfectionSpec { chi: 0.0, corr_length: 1.0, seed: 3 };
        assert_eq!(perturb_vertices(&m, &spec).unwrap(), m);
    }

    #[test]
    fn seeded_determinism() {
        let m = mesh();
        let spec = ImperfectionSpec { chi: 1e-3, corr_length: 0.064, seed: 11 };
        let a = perturb_vertices(&m, &spec).unwrap();
        let b = perturb_vertices(&m, &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.positions, m.positions);
        let other = perturb_vertices(&m, &ImperfectionSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.positions, other.positions);
    }

    #[test]
    fn kernel_at_correlation_length() {
        let a = 0.016;
        let spec = ImperfectionSpec::for_crease_length(a, 0);
        let s = imperfection_kernel(&spec, 4.0 * a);
        assert!((s / a - 0.4 * (-1f64).exp()).abs() < 1e-15);
        assert!((s / a - 0.14715).abs() < 1e-5);
    }

    #[test]
    fn rest_state_is_rebuilt() {
        let m = mesh();
        let spec = ImperfectionSpec { chi: 5e-4, corr_length: 0.064, seed: 5 };
        let p = perturb_vertices(&m, &spec).unwrap();
        p.validate().unwrap();
        let angles = p.angles(&p.positions).unwrap();
        for (h, phi) in p.hinges.iter().zip(angles) {
            assert!((h.rest_angle - phi).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let m = mesh();
        assert!(perturb_vertices(&m, &ImperfectionSpec { chi: -1.0, corr_length: 1.0, seed: 0 }).is_err());
        assert!(perturb_vertices(&m, &ImperfectionSpec { chi: 1.0, corr_length: 0.0, seed: 0 }).is_err());
    }
}
